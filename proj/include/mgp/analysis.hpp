#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mgp/error.hpp"
#include "mgp/image_io.hpp"
#include "mgp/inversion.hpp"
#include "mgp/model.hpp"
#include "mgp/objective.hpp"
#include "mgp/tensor.hpp"
#include "mgp/tensor_file.hpp"

namespace mgp {

/// Peak signal-to-noise ratio in dB; +infinity when the images agree.
inline double psnr(const Tensor& a, const Tensor& b, double peak) {
    detail::require_same_shape(a, b, "psnr");
    if (!(peak > 0)) throw ContractError("psnr: peak must be positive");
    double sq = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a.values()[i] - b.values()[i];
        sq += d * d;
    }
    const double mse = sq / static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

/// Mean structural similarity over uniformly weighted sliding windows,
/// averaged across channels. Window moments use the centered two-pass
/// form with 1/n normalization.
inline double ssim(const Tensor& a, const Tensor& b, std::size_t window = 7, double c1 = 4e-4,
                   double c2 = 36e-4) {
    detail::require_same_shape(a, b, "ssim");
    if (a.rank() != 4) throw ShapeError("ssim: inputs must be rank 4");
    const std::size_t H = a.extent(2), W = a.extent(3);
    if (window % 2 == 0) throw ContractError("ssim: window must be odd");
    if (window > H || window > W)
        throw ContractError("ssim: window " + std::to_string(window) + " exceeds image " +
                            detail::shape_str(a.shape()));
    const std::size_t BC = a.extent(0) * a.extent(1);
    const double n = static_cast<double>(window * window);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t bc = 0; bc < BC; ++bc) {
        const double* pa = a.values().data() + bc * H * W;
        const double* pb = b.values().data() + bc * H * W;
        for (std::size_t y = 0; y + window <= H; ++y)
            for (std::size_t x = 0; x + window <= W; ++x) {
                double ma = 0.0, mb = 0.0;
                for (std::size_t dy = 0; dy < window; ++dy)
                    for (std::size_t dx = 0; dx < window; ++dx) {
                        ma += pa[(y + dy) * W + x + dx];
                        mb += pb[(y + dy) * W + x + dx];
                    }
                ma /= n;
                mb /= n;
                double va = 0.0, vb = 0.0, cov = 0.0;
                for (std::size_t dy = 0; dy < window; ++dy)
                    for (std::size_t dx = 0; dx < window; ++dx) {
                        const double da = pa[(y + dy) * W + x + dx] - ma;
                        const double db = pb[(y + dy) * W + x + dx] - mb;
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                va /= n;
                vb /= n;
                cov /= n;
                const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
                const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
                total += num / den;
                ++count;
            }
    }
    return total / static_cast<double>(count);
}

/// Intersection over union of two binary maps; identical empty maps
/// count as a perfect match.
inline double iou(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "iou");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double va = a.values()[i], vb = b.values()[i];
        if ((va != 0.0 && va != 1.0) || (vb != 0.0 && vb != 1.0))
            throw ContractError("iou: maps must be binary");
        inter += va == 1.0 && vb == 1.0 ? 1 : 0;
        uni += va == 1.0 || vb == 1.0 ? 1 : 0;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

/// The engine's perceptual distance: l1 between extractor features.
inline double phi_distance(const PerceptualExtractor& phi, const Tensor& a, const Tensor& b) {
    NoGradGuard no_grad;
    return l1_dist(phi.extract(a), phi.extract(b)).item();
}

// ---------------------------------------------------------------------------
// Role attribution (which image region each latent code is in charge of)

struct CodeAttribution {
    Tensor difference_map;  // [1,1,H,W], non-negative
    std::optional<std::string> best_mask_label;
    double iou = 0.0;
};

struct AttributionReport {
    std::vector<CodeAttribution> per_code;
    double threshold = 0.2;
};

/// For each code, zeroes the importance entries above the threshold,
/// re-renders, and measures where the image changed. The binarized
/// difference map (cut at its own mean) is matched against the candidate
/// masks by IoU; ties keep the first label in input order.
inline AttributionReport attribute_codes(
    const Generator& g, const MultiCodeState& state,
    const std::vector<std::pair<std::string, Tensor>>& masks, double threshold = 0.2,
    bool compare_magnitude = false) {
    if (!(threshold > 0)) throw ContractError("attribute_codes: threshold must be positive");
    NoGradGuard no_grad;
    Tensor x_inv = compose(g, state);
    const std::size_t H = x_inv.extent(2), W = x_inv.extent(3);
    const std::size_t C = x_inv.extent(1);

    AttributionReport report;
    report.threshold = threshold;
    for (std::size_t n = 0; n < state.num_codes(); ++n) {
        MultiCodeState masked = state;
        Tensor alpha = state.importances[n].clone();
        for (double& v : alpha.values_mut()) {
            const double probe = compare_magnitude ? std::abs(v) : v;
            if (probe > threshold) v = 0.0;
        }
        masked.importances[n] = alpha;
        Tensor x_masked = compose(g, masked);

        Tensor diff = Tensor::zeros({1, 1, H, W});
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) {
                double sq = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    const double d = x_inv.at({0, c, h, w}) - x_masked.at({0, c, h, w});
                    sq += d * d;
                }
                diff.at({0, 0, h, w}) = std::sqrt(sq);
            }

        CodeAttribution entry;
        entry.difference_map = diff;
        if (!masks.empty()) {
            const double cut = mean(diff).item();
            Tensor region = Tensor::zeros({1, 1, H, W});
            for (std::size_t i = 0; i < region.numel(); ++i)
                region.values_mut()[i] = diff.values()[i] > cut ? 1.0 : 0.0;
            double best = -1.0;
            for (const auto& [label, mask] : masks) {
                const double score = iou(region, mask);
                if (score > best) {
                    best = score;
                    entry.best_mask_label = label;
                }
            }
            entry.iou = best;
        }
        report.per_code.push_back(std::move(entry));
    }
    return report;
}

inline void write_attribution_report(const AttributionReport& report,
                                     const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "report.txt", std::ios::trunc);
    if (!out) throw ParseError((dir / "report.txt").string() + ": cannot open for writing");
    out << "threshold " << report.threshold << "\n";
    out << "code\tlabel\tiou\n";
    for (std::size_t n = 0; n < report.per_code.size(); ++n) {
        const CodeAttribution& e = report.per_code[n];
        out << n << '\t' << (e.best_mask_label ? *e.best_mask_label : "-") << '\t';
        if (e.best_mask_label)
            out << std::setprecision(6) << e.iou << '\n';
        else
            out << "-\n";

        std::ostringstream name;
        name << "diff_" << std::setw(3) << std::setfill('0') << n;
        write_mtd(e.difference_map, dir / (name.str() + ".mtd"));

        // Image form: the map normalized to full 8-bit range.
        double peak = 0.0;
        for (double v : e.difference_map.values()) peak = std::max(peak, v);
        Tensor vis = e.difference_map.clone();
        for (double& v : vis.values_mut()) v = peak > 0 ? 2.0 * v / peak - 1.0 : -1.0;
        write_ppm(from_tensor(vis), dir / (name.str() + ".pgm"));
    }
}

// ---------------------------------------------------------------------------
// Ablation sweeps over the number of codes or the composition layer

enum class SweepAxis { num_codes, layer };

struct SweepRun {
    double axis_value = 0;
    std::uint64_t seed = 0;
    std::size_t target_id = 0;
    double psnr = 0;
    double final_loss = 0;
};

struct SweepPoint {
    double axis_value = 0;
    double mean_psnr = 0;
    double mean_loss = 0;
    double std_psnr = 0;
    double std_loss = 0;
};

struct SweepResult {
    SweepAxis axis = SweepAxis::num_codes;
    std::vector<SweepPoint> points;  // sorted by axis_value
    std::vector<SweepRun> runs;      // sorted by (axis_value, target_id, seed)
    std::vector<std::uint64_t> seeds;
};

/// Reconstruction sweep: inverts every target at every axis value and
/// seed, then aggregates PSNR and final loss per value. Runs may execute
/// on several worker threads; results land in preassigned slots, so the
/// aggregation never depends on scheduling.
inline SweepResult sweep(const Generator& g, const PerceptualExtractor& phi,
                         const std::vector<Tensor>& targets, SweepAxis axis,
                         const std::vector<long>& values, const std::vector<std::uint64_t>& seeds,
                         const InversionConfig& base_config, std::size_t workers = 1) {
    if (values.empty()) throw ContractError("sweep: no axis values given");
    if (targets.empty()) throw ContractError("sweep: no targets given");
    if (seeds.empty()) throw ContractError("sweep: no seeds given");

    struct Job {
        long value;
        std::size_t target_id;
        std::uint64_t seed;
    };
    std::vector<long> sorted_values = values;
    std::sort(sorted_values.begin(), sorted_values.end());
    std::vector<Job> jobs;
    for (long v : sorted_values)
        for (std::size_t t = 0; t < targets.size(); ++t)
            for (std::uint64_t s : seeds) jobs.push_back({v, t, s});

    std::vector<SweepRun> runs(jobs.size());
    std::vector<std::string> failures(jobs.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            const Job& job = jobs[i];
            try {
                InversionConfig config = base_config;
                config.seed = job.seed;
                if (axis == SweepAxis::num_codes)
                    config.num_codes = static_cast<std::size_t>(job.value);
                else
                    config.ell = job.value;
                const Tensor& target = targets[job.target_id];
                InversionResult r = invert(
                    g, phi,
                    TaskSpec::reconstruct(target, config.pixel_weight, config.perceptual_weight),
                    config);
                runs[i] = {static_cast<double>(job.value), job.seed, job.target_id,
                           psnr(r.image, target, 2.0), r.loss_trace.back().total};
            } catch (const Error& e) {
                failures[i] = std::string(e.what()) + " (target " +
                              std::to_string(job.target_id) + ", value " +
                              std::to_string(job.value) + ", seed " + std::to_string(job.seed) +
                              ")";
            }
        }
    };

    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    for (const std::string& f : failures)
        if (!f.empty()) throw NumericError("sweep: inversion failed: " + f);

    SweepResult result;
    result.axis = axis;
    result.seeds = seeds;
    result.runs = std::move(runs);
    const std::size_t per_value = targets.size() * seeds.size();
    for (std::size_t v = 0; v < sorted_values.size(); ++v) {
        const std::size_t base = v * per_value;
        double mp = 0, ml = 0;
        for (std::size_t i = 0; i < per_value; ++i) {
            mp += result.runs[base + i].psnr;
            ml += result.runs[base + i].final_loss;
        }
        mp /= static_cast<double>(per_value);
        ml /= static_cast<double>(per_value);
        double vp = 0, vl = 0;
        for (std::size_t i = 0; i < per_value; ++i) {
            vp += (result.runs[base + i].psnr - mp) * (result.runs[base + i].psnr - mp);
            vl += (result.runs[base + i].final_loss - ml) * (result.runs[base + i].final_loss - ml);
        }
        result.points.push_back({static_cast<double>(sorted_values[v]), mp, ml,
                                 std::sqrt(vp / static_cast<double>(per_value)),
                                 std::sqrt(vl / static_cast<double>(per_value))});
    }
    return result;
}

inline void write_sweep_csv(const SweepResult& result, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ParseError(path.string() + ": cannot open file for writing");
    out << "axis_value,seed,target_id,psnr,final_loss\n";
    out << std::setprecision(17);
    for (const SweepRun& r : result.runs)
        out << r.axis_value << ',' << r.seed << ',' << r.target_id << ',' << r.psnr << ','
            << r.final_loss << '\n';
}

}  // namespace mgp
