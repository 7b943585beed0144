#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "mgp/image_io.hpp"
#include "mgp/model.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = MGP_CLI_PATH;
const fs::path kAssets = MGP_ASSET_DIR;

struct RunResult {
    int exit_code = -1;
    std::string err;
};

RunResult run(const std::string& args) {
    const fs::path err_file = fs::temp_directory_path() / "mgp_cli_err.txt";
    const std::string cmd = kCli + " " + args + " 2>" + err_file.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WEXITSTATUS(status);
    std::ifstream in(err_file);
    r.err = {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return r;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file())
            out[fs::relative(entry.path(), dir).string()] = file_bytes(entry.path());
    return out;
}

fs::path work_dir() {
    const fs::path dir = fs::temp_directory_path() / "mgp_cli_test";
    fs::create_directories(dir);
    return dir;
}

const std::string kGen = (kAssets / "toy_gen_seed7.mgc").string();
const std::string kPhi = (kAssets / "toy_phi_seed11.mgc").string();

fs::path make_target() {
    const fs::path p = work_dir() / "target.ppm";
    if (!fs::exists(p)) {
        mgp::Generator g = mgp::make_toy_generator(7, 8, 64);
        mgp::Rng rng(404);
        mgp::Tensor img = g.forward(mgp::Tensor::randn({1, 64, 1, 1}, rng));
        mgp::write_ppm(mgp::from_tensor(img), p);
    }
    return p;
}

}  // namespace

TEST_CASE("make-toy reproduces the shipped checkpoints") {
    const fs::path dir = work_dir();
    const std::string out1 = (dir / "gen_a.mgc").string();
    const std::string out2 = (dir / "gen_b.mgc").string();
    REQUIRE(run("make-toy --kind gen --seed 7 --out " + out1).exit_code == 0);
    REQUIRE(run("make-toy --kind gen --seed 7 --out " + out2).exit_code == 0);
    REQUIRE(file_bytes(out1) == file_bytes(out2));
    REQUIRE(file_bytes(out1) == file_bytes(kGen));
    REQUIRE(fs::exists(dir / "gen_a.txt"));

    const std::string phi_out = (dir / "phi.mgc").string();
    REQUIRE(run("make-toy --kind phi --seed 11 --out " + phi_out).exit_code == 0);
    REQUIRE(file_bytes(phi_out) == file_bytes(kPhi));
}

TEST_CASE("info prints the architecture table") {
    const fs::path out = work_dir() / "info.txt";
    const std::string cmd =
        kCli + " info --model " + kGen + " >" + out.string() + " 2>/dev/null";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    const std::string text = file_bytes(out);
    REQUIRE(text.find("kind generator") != std::string::npos);
    REQUIRE(text.find("latent_dim 64") != std::string::npos);
    REQUIRE(text.find("split 6 channels 64") != std::string::npos);
}

TEST_CASE("invert writes its outputs and is byte-deterministic") {
    const fs::path dir = work_dir();
    const std::string target = make_target().string();
    const std::string base = "invert --gen " + kGen + " --phi " + kPhi + " --target " + target +
                             " --codes 2 --layer 6 --steps 6 --lr 0.01 --seed 1 --out-dir ";
    const fs::path out1 = dir / "inv1";
    const fs::path out2 = dir / "inv2";
    fs::remove_all(out1);
    fs::remove_all(out2);
    REQUIRE(run(base + out1.string()).exit_code == 0);
    REQUIRE(run(base + out2.string()).exit_code == 0);

    REQUIRE(fs::exists(out1 / "reconstruction.ppm"));
    REQUIRE(fs::exists(out1 / "trace.csv"));
    REQUIRE(fs::exists(out1 / "state" / "state.txt"));
    REQUIRE(fs::exists(out1 / "state" / "code_001.mtd"));
    REQUIRE(fs::exists(out1 / "state" / "alpha_001.mtd"));

    const auto a = dir_contents(out1);
    const auto b = dir_contents(out2);
    REQUIRE(a.size() == b.size());
    for (const auto& [name, bytes] : a) {
        INFO(name);
        REQUIRE(b.count(name) == 1);
        REQUIRE(bytes == b.at(name));
    }
}

TEST_CASE("MGP_SEED is used only when --seed is absent") {
    const fs::path dir = work_dir();
    const std::string target = make_target().string();
    auto invert_into = [&](const std::string& prefix, const std::string& seed_flag,
                           const fs::path& out) {
        fs::remove_all(out);
        const std::string cmd = prefix + kCli + " invert --gen " + kGen + " --phi " + kPhi +
                                " --target " + target + " --codes 1 --steps 4 " + seed_flag +
                                " --out-dir " + out.string() + " 2>/dev/null";
        REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    };
    const fs::path by_flag = dir / "seed_flag";
    const fs::path by_env = dir / "seed_env";
    const fs::path flag_wins = dir / "seed_flag_wins";
    invert_into("", "--seed 5", by_flag);
    invert_into("MGP_SEED=5 ", "", by_env);
    invert_into("MGP_SEED=9 ", "--seed 5", flag_wins);
    REQUIRE(file_bytes(by_flag / "reconstruction.ppm") ==
            file_bytes(by_env / "reconstruction.ppm"));
    REQUIRE(file_bytes(by_flag / "reconstruction.ppm") ==
            file_bytes(flag_wins / "reconstruction.ppm"));
}

TEST_CASE("usage errors exit 1, runtime errors exit 2") {
    SECTION("missing required flag") {
        RunResult r = run("invert --gen " + kGen);
        REQUIRE(r.exit_code == 1);
        REQUIRE(!r.err.empty());
    }
    SECTION("unknown subcommand") {
        REQUIRE(run("explode").exit_code == 1);
    }
    SECTION("sr factor that does not match the generator output") {
        const std::string target = make_target().string();  // 32x32
        RunResult r = run("sr --gen " + kGen + " --phi " + kPhi + " --target " + target +
                          " --factor 16 --steps 2 --out-dir " + (work_dir() / "sr_bad").string());
        REQUIRE(r.exit_code == 2);
        REQUIRE(r.err.find("shape error") != std::string::npos);
    }
    SECTION("corrupt checkpoint is a parse error") {
        const fs::path bad = work_dir() / "bad.mgc";
        std::ofstream(bad, std::ios::binary) << "MGCX";
        RunResult r = run("info --model " + bad.string());
        REQUIRE(r.exit_code == 2);
        REQUIRE(r.err.find("parse error") != std::string::npos);
    }
}

TEST_CASE("sr runs with a conforming factor") {
    const fs::path dir = work_dir();
    // 8x8 low-resolution reference, factor 4 -> 32x32 generator output.
    mgp::Tensor target = mgp::to_tensor(mgp::read_ppm(make_target()));
    mgp::Degraded d = mgp::degrade_downsample(target, 4);
    const fs::path lr = dir / "lr.ppm";
    mgp::write_ppm(mgp::from_tensor(d.reference), lr);
    const fs::path out = dir / "sr_out";
    fs::remove_all(out);
    RunResult r = run("sr --gen " + kGen + " --phi " + kPhi + " --target " + lr.string() +
                      " --factor 4 --codes 2 --steps 4 --seed 3 --out-dir " + out.string());
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists(out / "reconstruction.ppm"));
}

TEST_CASE("colorize accepts a grayscale target") {
    const fs::path dir = work_dir();
    mgp::Tensor target = mgp::to_tensor(mgp::read_ppm(make_target()));
    const fs::path gray_path = dir / "gray.pgm";
    mgp::write_ppm(mgp::from_tensor(mgp::degrade_grayscale(target).reference), gray_path);
    const fs::path out = dir / "color_out";
    fs::remove_all(out);
    RunResult r = run("colorize --gen " + kGen + " --phi " + kPhi + " --target " +
                      gray_path.string() + " --codes 2 --steps 4 --seed 3 --out-dir " +
                      out.string());
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists(out / "reconstruction.ppm"));
}

TEST_CASE("inpaint synthesizes and saves the degradation") {
    const fs::path out = work_dir() / "inpaint_out";
    fs::remove_all(out);
    RunResult r = run("inpaint --gen " + kGen + " --phi " + kPhi + " --target " +
                      make_target().string() + " --center-crop 16 --codes 2 --steps 4 --seed 2" +
                      " --out-dir " + out.string());
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists(out / "degraded.ppm"));
    REQUIRE(fs::exists(out / "mask.pgm"));
    REQUIRE(fs::exists(out / "reconstruction.ppm"));
    mgp::ImageFile mask = mgp::read_ppm(out / "mask.pgm");
    std::size_t hidden = 0;
    for (std::uint8_t v : mask.pixels) hidden += v == 0 ? 1 : 0;
    REQUIRE(hidden == 256);
}

TEST_CASE("manipulate and attribute consume a saved state") {
    const fs::path dir = work_dir();
    const fs::path inv = dir / "for_state";
    fs::remove_all(inv);
    REQUIRE(run("invert --gen " + kGen + " --phi " + kPhi + " --target " +
                make_target().string() + " --codes 2 --steps 4 --seed 8 --out-dir " +
                inv.string())
                .exit_code == 0);

    SECTION("manipulate") {
        const fs::path direction = dir / "direction.mtd";
        mgp::Rng rng(12);
        mgp::write_mtd(mgp::Tensor::randn({1, 64, 1, 1}, rng), direction);
        const fs::path out = dir / "man_out";
        fs::remove_all(out);
        RunResult r = run("manipulate --gen " + kGen + " --state " + (inv / "state").string() +
                          " --direction " + direction.string() + " --magnitude 1.5 --out-dir " +
                          out.string());
        REQUIRE(r.exit_code == 0);
        REQUIRE(fs::exists(out / "manipulated.ppm"));
        REQUIRE(fs::exists(out / "state" / "code_001.mtd"));
    }

    SECTION("attribute") {
        const fs::path mask_path = dir / "half.pgm";
        mgp::ImageFile half;
        half.width = 32;
        half.height = 32;
        half.channels = 1;
        half.pixels.assign(32 * 32, 0);
        for (std::size_t i = 0; i < 32 * 16; ++i) half.pixels[i] = 255;
        mgp::write_ppm(half, mask_path);
        const fs::path out = dir / "attr_out";
        fs::remove_all(out);
        RunResult r = run("attribute --gen " + kGen + " --state " + (inv / "state").string() +
                          " --mask top=" + mask_path.string() + " --threshold 0.2 --out-dir " +
                          out.string());
        REQUIRE(r.exit_code == 0);
        REQUIRE(fs::exists(out / "report.txt"));
        const std::string report = file_bytes(out / "report.txt");
        REQUIRE(report.find("threshold 0.2") != std::string::npos);
    }
}

TEST_CASE("sweep writes the per-run csv") {
    const fs::path out = work_dir() / "sweep.csv";
    fs::remove_all(out);
    RunResult r = run("sweep --gen " + kGen + " --phi " + kPhi + " --targets " +
                      make_target().string() + " --axis codes --values 1,2 --seeds 3 --steps 3" +
                      " --layer 6 --out " + out.string());
    REQUIRE(r.exit_code == 0);
    std::ifstream in(out);
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "axis_value,seed,target_id,psnr,final_loss");
    std::size_t rows = 0;
    std::string line;
    while (std::getline(in, line)) ++rows;
    REQUIRE(rows == 2);
}

TEST_CASE("commands do not mutate their inputs") {
    const std::string before = file_bytes(make_target());
    const fs::path out = work_dir() / "nomut";
    fs::remove_all(out);
    REQUIRE(run("invert --gen " + kGen + " --phi " + kPhi + " --target " +
                make_target().string() + " --codes 1 --steps 2 --seed 1 --out-dir " +
                out.string())
                .exit_code == 0);
    REQUIRE(file_bytes(make_target()) == before);
    REQUIRE(file_bytes(kGen) == file_bytes(kGen));
}
