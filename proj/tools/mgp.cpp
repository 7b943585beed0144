// mgp: multi-code GAN inversion engine.
//
// Reconstruction, colorization, super-resolution, inpainting, denoising,
// latent manipulation, ablation sweeps and code attribution on top of a
// frozen seeded generator. Every command is fully determined by its flags
// (plus MGP_SEED when --seed is absent); identical invocations produce
// byte-identical outputs.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mgp/mgp.hpp"

namespace fs = std::filesystem;

namespace {

struct InversionFlags {
    std::string gen_path;
    std::string phi_path;
    std::string target_path;
    std::string out_dir;
    std::size_t codes = 20;
    long layer = 6;
    std::size_t steps = 1000;
    double lr = 0.01;
    std::uint64_t seed = 0;
    double wp = 1.0;
    double wf = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t log_every = 100;
    bool verbose = false;

    CLI::Option* seed_opt = nullptr;
};

void add_model_flags(CLI::App* cmd, InversionFlags& f) {
    cmd->add_option("--gen", f.gen_path, "Generator checkpoint (MGC1)")->required();
    cmd->add_option("--phi", f.phi_path, "Perceptual extractor checkpoint (MGC1)")->required();
}

void add_inversion_flags(CLI::App* cmd, InversionFlags& f, long default_layer) {
    f.layer = default_layer;
    add_model_flags(cmd, f);
    cmd->add_option("--target", f.target_path, "Task input image (PPM/PGM)")->required();
    cmd->add_option("--out-dir", f.out_dir, "Output directory")->required();
    cmd->add_option("--codes", f.codes, "Number of latent codes N")->capture_default_str();
    cmd->add_option("--layer", f.layer, "Feature composition layer")->capture_default_str();
    cmd->add_option("--steps", f.steps, "Optimization steps")->capture_default_str();
    cmd->add_option("--lr", f.lr, "Adam learning rate")->capture_default_str();
    f.seed_opt = cmd->add_option("--seed", f.seed,
                                 "Initialization seed (MGP_SEED overrides when absent)")
                     ->capture_default_str();
    cmd->add_option("--wp", f.wp, "Pixel loss weight")->capture_default_str();
    cmd->add_option("--wf", f.wf, "Perceptual loss weight")->capture_default_str();
    cmd->add_option("--beta1", f.beta1, "Adam beta1")->capture_default_str();
    cmd->add_option("--beta2", f.beta2, "Adam beta2")->capture_default_str();
    cmd->add_option("--eps", f.eps, "Adam epsilon")->capture_default_str();
    cmd->add_option("--log-every", f.log_every, "Trace print interval under --verbose")
        ->capture_default_str();
    cmd->add_flag("--verbose", f.verbose, "Print the loss trace summary");
}

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void resolve_seed(InversionFlags& f) {
    if (f.seed_opt != nullptr && f.seed_opt->count() > 0) return;
    const char* env = std::getenv("MGP_SEED");
    if (env == nullptr) return;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
        throw UsageError(std::string("MGP_SEED is not an integer: ") + env);
    f.seed = v;
}

mgp::InversionConfig to_config(const InversionFlags& f) {
    mgp::InversionConfig config;
    config.num_codes = f.codes;
    config.ell = f.layer;
    config.steps = f.steps;
    config.learning_rate = f.lr;
    config.seed = f.seed;
    config.adam_beta1 = f.beta1;
    config.adam_beta2 = f.beta2;
    config.adam_eps = f.eps;
    config.pixel_weight = f.wp;
    config.perceptual_weight = f.wf;
    config.log_every = f.log_every;
    return config;
}

mgp::Tensor load_image_tensor(const std::string& path) {
    return mgp::to_tensor(mgp::read_ppm(path));
}

mgp::Tensor load_mask(const std::string& path) {
    const fs::path p = path;
    mgp::Tensor mask;
    if (p.extension() == ".mtd") {
        mask = mgp::read_mtd(p);
    } else {
        mgp::ImageFile img = mgp::read_ppm(p);
        if (img.channels != 1)
            throw mgp::ContractError("mask " + path + " must be a single-channel PGM");
        mask = mgp::Tensor::zeros({1, 1, img.height, img.width});
        for (std::size_t i = 0; i < img.pixels.size(); ++i) {
            if (img.pixels[i] == 255)
                mask.values_mut()[i] = 1.0;
            else if (img.pixels[i] != 0)
                throw mgp::ContractError("mask " + path + " must contain only 0 and 255 pixels");
        }
    }
    return mask;
}

void write_mask_pgm(const mgp::Tensor& mask, const fs::path& path) {
    mgp::ImageFile img;
    img.width = mask.extent(3);
    img.height = mask.extent(2);
    img.channels = 1;
    for (double v : mask.values()) img.pixels.push_back(v == 1.0 ? 255 : 0);
    mgp::write_ppm(img, path);
}

void report_result(const InversionFlags& f, const mgp::InversionResult& result) {
    if (!f.verbose) return;
    for (const mgp::TracePoint& p : result.loss_trace) {
        if (f.log_every != 0 && (p.step % f.log_every == 0 || p.step == f.steps))
            std::cout << "step " << p.step << " pixel " << p.pixel << " perceptual "
                      << p.perceptual << " total " << p.total << "\n";
    }
    std::cout << "final_loss " << result.loss_trace.back().total << "\n";
    std::cout << "wall_time_s " << result.wall_time_seconds << "\n";
}

int run_inversion_command(const InversionFlags& f, const mgp::TaskSpec& spec,
                          const mgp::Generator& g, const mgp::PerceptualExtractor& phi) {
    mgp::InversionResult result = mgp::invert(g, phi, spec, to_config(f));
    fs::create_directories(f.out_dir);
    mgp::write_ppm(mgp::from_tensor(result.image), fs::path(f.out_dir) / "reconstruction.ppm");
    mgp::write_trace_csv(result.loss_trace, fs::path(f.out_dir) / "trace.csv");
    mgp::save_state(result.final_state, fs::path(f.out_dir) / "state");
    report_result(f, result);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mgp: multi-code GAN inversion engine"};
    app.require_subcommand(1);

    // invert
    InversionFlags invert_f;
    CLI::App* cmd_invert = app.add_subcommand("invert", "Reconstruct a target image");
    add_inversion_flags(cmd_invert, invert_f, 6);

    // colorize
    InversionFlags color_f;
    CLI::App* cmd_color =
        app.add_subcommand("colorize", "Colorize a grayscale image (PGM, or PPM taken to luma)");
    add_inversion_flags(cmd_color, color_f, 8);

    // sr
    InversionFlags sr_f;
    std::size_t sr_factor = 4;
    CLI::App* cmd_sr = app.add_subcommand("sr", "Super-resolve a low-resolution image");
    add_inversion_flags(cmd_sr, sr_f, 6);
    cmd_sr->add_option("--factor", sr_factor, "Super-resolution factor")->capture_default_str();

    // inpaint
    InversionFlags inpaint_f;
    std::string inpaint_mask_path;
    std::size_t inpaint_center = 0;
    double inpaint_random = -1.0;
    std::uint64_t inpaint_mask_seed = 0;
    CLI::App* cmd_inpaint = app.add_subcommand("inpaint", "Fill in masked image regions");
    add_inversion_flags(cmd_inpaint, inpaint_f, 4);
    CLI::Option* opt_mask = cmd_inpaint->add_option("--mask", inpaint_mask_path,
                                                    "Known-pixel mask (PGM 0/255 or MTD1)");
    CLI::Option* opt_center = cmd_inpaint->add_option(
        "--center-crop", inpaint_center, "Synthesize a centered hidden box of this size");
    CLI::Option* opt_random = cmd_inpaint->add_option(
        "--random-crop", inpaint_random, "Synthesize a mask hiding this fraction of pixels");
    cmd_inpaint->add_option("--mask-seed", inpaint_mask_seed, "Seed for --random-crop")
        ->capture_default_str();
    opt_mask->excludes(opt_center)->excludes(opt_random);
    opt_center->excludes(opt_random);

    // denoise
    InversionFlags denoise_f;
    double denoise_sigma = -1.0;
    std::uint64_t denoise_noise_seed = 0;
    CLI::App* cmd_denoise = app.add_subcommand("denoise", "Restore a noisy image");
    add_inversion_flags(cmd_denoise, denoise_f, 6);
    cmd_denoise->add_option("--add-noise", denoise_sigma,
                            "Add seeded Gaussian noise of this sigma to the target first");
    cmd_denoise->add_option("--noise-seed", denoise_noise_seed, "Seed for --add-noise")
        ->capture_default_str();

    // manipulate
    std::string man_gen, man_state, man_direction, man_out;
    double man_magnitude = 1.0;
    CLI::App* cmd_man =
        app.add_subcommand("manipulate", "Shift the latent codes of a saved state");
    cmd_man->add_option("--gen", man_gen, "Generator checkpoint")->required();
    cmd_man->add_option("--state", man_state, "State directory from a previous run")->required();
    cmd_man->add_option("--direction", man_direction, "Latent direction (MTD1, [1,D,1,1])")
        ->required();
    cmd_man->add_option("--magnitude", man_magnitude, "Edit strength")->capture_default_str();
    cmd_man->add_option("--out-dir", man_out, "Output directory")->required();

    // sweep
    std::string sweep_gen, sweep_phi, sweep_axis = "codes", sweep_out;
    std::vector<std::string> sweep_targets;
    std::vector<long> sweep_values;
    std::vector<std::uint64_t> sweep_seeds;
    std::size_t sweep_workers = 1;
    bool sweep_verbose = false;
    InversionFlags sweep_base;
    CLI::App* cmd_sweep = app.add_subcommand("sweep", "Ablation sweep over codes or layers");
    cmd_sweep->add_option("--gen", sweep_gen, "Generator checkpoint")->required();
    cmd_sweep->add_option("--phi", sweep_phi, "Perceptual extractor checkpoint")->required();
    cmd_sweep->add_option("--targets", sweep_targets, "Target images (comma separated)")
        ->required()
        ->delimiter(',');
    cmd_sweep->add_option("--axis", sweep_axis, "Sweep axis: codes or layer")
        ->check(CLI::IsMember({"codes", "layer"}))
        ->capture_default_str();
    cmd_sweep->add_option("--values", sweep_values, "Axis values (comma separated)")
        ->required()
        ->delimiter(',');
    cmd_sweep->add_option("--seeds", sweep_seeds, "Seeds (comma separated)")
        ->required()
        ->delimiter(',');
    cmd_sweep->add_option("--codes", sweep_base.codes, "Base number of codes")
        ->capture_default_str();
    cmd_sweep->add_option("--layer", sweep_base.layer, "Base composition layer")
        ->capture_default_str();
    cmd_sweep->add_option("--steps", sweep_base.steps, "Optimization steps")
        ->capture_default_str();
    cmd_sweep->add_option("--lr", sweep_base.lr, "Adam learning rate")->capture_default_str();
    cmd_sweep->add_option("--wp", sweep_base.wp, "Pixel loss weight")->capture_default_str();
    cmd_sweep->add_option("--wf", sweep_base.wf, "Perceptual loss weight")->capture_default_str();
    cmd_sweep->add_option("--workers", sweep_workers, "Parallel runs")->capture_default_str();
    cmd_sweep->add_option("--out", sweep_out, "Per-run CSV output path")->required();
    cmd_sweep->add_flag("--verbose", sweep_verbose, "Print per-value aggregates");

    // attribute
    std::string attr_gen, attr_state, attr_out;
    std::vector<std::string> attr_masks;
    double attr_threshold = 0.2;
    bool attr_by_magnitude = false;
    CLI::App* cmd_attr =
        app.add_subcommand("attribute", "Per-code difference maps and IoU labels");
    cmd_attr->add_option("--gen", attr_gen, "Generator checkpoint")->required();
    cmd_attr->add_option("--state", attr_state, "State directory from a previous run")->required();
    cmd_attr->add_option("--mask", attr_masks, "Candidate mask as label=path (repeatable)");
    cmd_attr->add_option("--threshold", attr_threshold, "Importance zeroing threshold")
        ->capture_default_str();
    cmd_attr->add_flag("--by-magnitude", attr_by_magnitude,
                       "Compare |alpha| against the threshold instead of the raw value");
    cmd_attr->add_option("--out-dir", attr_out, "Output directory")->required();

    // make-toy
    std::string toy_kind = "gen", toy_out;
    std::uint64_t toy_seed = 7;
    std::size_t toy_depth = 8, toy_latent = 64, toy_base = 0;
    CLI::App* cmd_toy = app.add_subcommand("make-toy", "Generate a seeded toy checkpoint");
    cmd_toy->add_option("--kind", toy_kind, "gen or phi")
        ->check(CLI::IsMember({"gen", "phi"}))
        ->capture_default_str();
    cmd_toy->add_option("--seed", toy_seed, "Weight seed")->capture_default_str();
    cmd_toy->add_option("--depth", toy_depth, "Blocks (gen only)")->capture_default_str();
    cmd_toy->add_option("--latent", toy_latent, "Latent dimension (gen only)")
        ->capture_default_str();
    cmd_toy->add_option("--base", toy_base,
                        "Base channel width (default 256 for gen, 32 for phi)");
    cmd_toy->add_option("--out", toy_out, "Checkpoint output path")->required();

    // info
    std::string info_path;
    CLI::App* cmd_info = app.add_subcommand("info", "Describe a checkpoint");
    cmd_info->add_option("--model", info_path, "Checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    }

    try {
        if (*cmd_invert) {
            resolve_seed(invert_f);
            mgp::Generator g = mgp::load_generator(invert_f.gen_path);
            mgp::PerceptualExtractor phi = mgp::load_extractor(invert_f.phi_path);
            mgp::Tensor target = load_image_tensor(invert_f.target_path);
            return run_inversion_command(
                invert_f, mgp::TaskSpec::reconstruct(target, invert_f.wp, invert_f.wf), g, phi);
        }
        if (*cmd_color) {
            resolve_seed(color_f);
            mgp::Generator g = mgp::load_generator(color_f.gen_path);
            mgp::PerceptualExtractor phi = mgp::load_extractor(color_f.phi_path);
            mgp::Tensor input = load_image_tensor(color_f.target_path);
            mgp::Tensor reference =
                input.extent(1) == 1 ? input : mgp::degrade_grayscale(input).reference;
            return run_inversion_command(
                color_f, mgp::TaskSpec::colorize(reference, color_f.wp, color_f.wf), g, phi);
        }
        if (*cmd_sr) {
            resolve_seed(sr_f);
            mgp::Generator g = mgp::load_generator(sr_f.gen_path);
            mgp::PerceptualExtractor phi = mgp::load_extractor(sr_f.phi_path);
            mgp::Tensor low_res = load_image_tensor(sr_f.target_path);
            const mgp::FeatureShape out = g.output_shape();
            if (low_res.extent(2) * sr_factor != out.height ||
                low_res.extent(3) * sr_factor != out.width)
                throw mgp::ShapeError(
                    "sr: low-resolution input " + std::to_string(low_res.extent(3)) + "x" +
                    std::to_string(low_res.extent(2)) + " with factor " +
                    std::to_string(sr_factor) + " does not match the generator output " +
                    std::to_string(out.width) + "x" + std::to_string(out.height));
            return run_inversion_command(
                sr_f, mgp::TaskSpec::super_resolve(low_res, sr_factor, sr_f.wp, sr_f.wf), g, phi);
        }
        if (*cmd_inpaint) {
            resolve_seed(inpaint_f);
            mgp::Generator g = mgp::load_generator(inpaint_f.gen_path);
            mgp::PerceptualExtractor phi = mgp::load_extractor(inpaint_f.phi_path);
            mgp::Tensor target = load_image_tensor(inpaint_f.target_path);
            mgp::Tensor reference = target;
            mgp::Tensor mask;
            const bool synthesized = opt_center->count() > 0 || opt_random->count() > 0;
            if (opt_mask->count() > 0) {
                mask = load_mask(inpaint_mask_path);
            } else if (opt_center->count() > 0) {
                mgp::Degraded d = mgp::degrade_center_crop(target, inpaint_center);
                reference = d.reference;
                mask = *d.mask;
            } else if (opt_random->count() > 0) {
                mgp::Degraded d =
                    mgp::degrade_random_crop(target, inpaint_random, inpaint_mask_seed);
                reference = d.reference;
                mask = *d.mask;
            } else {
                throw UsageError("inpaint needs --mask, --center-crop or --random-crop");
            }
            if (synthesized) {
                fs::create_directories(inpaint_f.out_dir);
                mgp::write_ppm(mgp::from_tensor(reference),
                               fs::path(inpaint_f.out_dir) / "degraded.ppm");
                write_mask_pgm(mask, fs::path(inpaint_f.out_dir) / "mask.pgm");
            }
            return run_inversion_command(
                inpaint_f, mgp::TaskSpec::inpaint(reference, mask, inpaint_f.wp, inpaint_f.wf), g,
                phi);
        }
        if (*cmd_denoise) {
            resolve_seed(denoise_f);
            mgp::Generator g = mgp::load_generator(denoise_f.gen_path);
            mgp::PerceptualExtractor phi = mgp::load_extractor(denoise_f.phi_path);
            mgp::Tensor target = load_image_tensor(denoise_f.target_path);
            if (denoise_sigma >= 0.0) {
                target = mgp::degrade_gaussian_noise(target, denoise_sigma, denoise_noise_seed)
                             .reference;
                fs::create_directories(denoise_f.out_dir);
                mgp::write_ppm(mgp::from_tensor(target),
                               fs::path(denoise_f.out_dir) / "degraded.ppm");
            }
            return run_inversion_command(
                denoise_f, mgp::TaskSpec::denoise(target, denoise_f.wp, denoise_f.wf), g, phi);
        }
        if (*cmd_man) {
            mgp::Generator g = mgp::load_generator(man_gen);
            mgp::MultiCodeState state = mgp::load_state(man_state);
            mgp::Tensor direction = mgp::read_mtd(man_direction);
            mgp::MultiCodeState edited = mgp::manipulate(state, direction, man_magnitude);
            mgp::NoGradGuard no_grad;
            mgp::Tensor image = mgp::compose(g, edited);
            fs::create_directories(man_out);
            mgp::write_ppm(mgp::from_tensor(image), fs::path(man_out) / "manipulated.ppm");
            mgp::save_state(edited, fs::path(man_out) / "state");
            return 0;
        }
        if (*cmd_sweep) {
            mgp::Generator g = mgp::load_generator(sweep_gen);
            mgp::PerceptualExtractor phi = mgp::load_extractor(sweep_phi);
            std::vector<mgp::Tensor> targets;
            for (const std::string& t : sweep_targets) targets.push_back(load_image_tensor(t));
            const mgp::SweepAxis axis =
                sweep_axis == "codes" ? mgp::SweepAxis::num_codes : mgp::SweepAxis::layer;
            mgp::SweepResult result =
                mgp::sweep(g, phi, targets, axis, sweep_values, sweep_seeds,
                           to_config(sweep_base), sweep_workers);
            if (const fs::path parent = fs::path(sweep_out).parent_path(); !parent.empty())
                fs::create_directories(parent);
            mgp::write_sweep_csv(result, sweep_out);
            if (sweep_verbose)
                for (const mgp::SweepPoint& p : result.points)
                    std::cout << "value " << p.axis_value << " mean_psnr " << p.mean_psnr
                              << " mean_loss " << p.mean_loss << " std_loss " << p.std_loss
                              << "\n";
            return 0;
        }
        if (*cmd_attr) {
            mgp::Generator g = mgp::load_generator(attr_gen);
            mgp::MultiCodeState state = mgp::load_state(attr_state);
            std::vector<std::pair<std::string, mgp::Tensor>> masks;
            for (const std::string& spec : attr_masks) {
                const std::size_t eq = spec.find('=');
                if (eq == std::string::npos || eq == 0)
                    throw UsageError("--mask expects label=path, got: " + spec);
                masks.emplace_back(spec.substr(0, eq), load_mask(spec.substr(eq + 1)));
            }
            mgp::AttributionReport report =
                mgp::attribute_codes(g, state, masks, attr_threshold, attr_by_magnitude);
            mgp::write_attribution_report(report, attr_out);
            return 0;
        }
        if (*cmd_toy) {
            const fs::path out = toy_out;
            if (const fs::path parent = out.parent_path(); !parent.empty())
                fs::create_directories(parent);
            fs::path sidecar = out;
            sidecar.replace_extension(".txt");
            if (toy_kind == "gen") {
                mgp::Generator g = mgp::make_toy_generator(toy_seed, toy_depth, toy_latent,
                                                           toy_base == 0 ? 256 : toy_base);
                mgp::save_checkpoint(g, out);
                mgp::write_model_sidecar(g, sidecar);
            } else {
                mgp::PerceptualExtractor phi =
                    mgp::make_toy_extractor(toy_seed, toy_base == 0 ? 32 : toy_base);
                mgp::save_checkpoint(phi, out);
                mgp::write_model_sidecar(phi, sidecar);
            }
            return 0;
        }
        if (*cmd_info) {
            mgp::Model model = mgp::load_checkpoint(info_path);
            std::cout << "file " << info_path << "\n";
            if (const auto* g = std::get_if<mgp::Generator>(&model))
                std::cout << mgp::describe(*g);
            else
                std::cout << mgp::describe(std::get<mgp::PerceptualExtractor>(model));
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const mgp::Error& e) {
        std::cerr << e.category() << " error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
