#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "mgp/error.hpp"
#include "mgp/model.hpp"
#include "mgp/objective.hpp"
#include "mgp/tensor.hpp"
#include "mgp/tensor_file.hpp"

namespace mgp {

/// The optimization variables of multi-code inversion: N latent codes and
/// N per-channel importance vectors for the split at layer ell.
struct MultiCodeState {
    std::vector<Tensor> codes;        // each [1,D,1,1]
    std::vector<Tensor> importances;  // each [C_ell]
    long ell = 1;

    std::size_t num_codes() const { return codes.size(); }
};

enum class InitPolicy { random_normal, from_codes };

struct InversionConfig {
    std::size_t num_codes = 20;
    long ell = 6;
    std::size_t steps = 1000;
    double learning_rate = 0.01;
    std::uint64_t seed = 0;
    InitPolicy init_policy = InitPolicy::random_normal;
    std::vector<Tensor> init_codes;  // consumed by from_codes
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double pixel_weight = 1.0;
    double perceptual_weight = 1.0;
    std::size_t log_every = 100;
};

struct TracePoint {
    std::size_t step = 0;
    double pixel = 0.0;
    double perceptual = 0.0;
    double total = 0.0;
};

struct InversionResult {
    MultiCodeState final_state;
    Tensor image;
    std::vector<TracePoint> loss_trace;
    double wall_time_seconds = 0.0;
};

namespace detail {

inline void check_state(const Generator& g, const MultiCodeState& state) {
    if (state.codes.empty()) throw ContractError("compose: state holds no codes");
    if (state.codes.size() != state.importances.size())
        throw ContractError("compose: " + std::to_string(state.codes.size()) + " codes but " +
                            std::to_string(state.importances.size()) + " importance vectors");
    const FeatureShape f = g.feature_shape(state.ell);
    const Shape code_shape{1, g.latent_dim(), 1, 1};
    for (const Tensor& z : state.codes)
        if (z.shape() != code_shape)
            throw ShapeError("compose: code " + shape_str(z.shape()) + " must be " +
                             shape_str(code_shape));
    for (const Tensor& a : state.importances)
        if (a.shape() != Shape{f.channels})
            throw ShapeError("compose: importance " + shape_str(a.shape()) + " must be [" +
                             std::to_string(f.channels) + "] for split layer " +
                             std::to_string(state.ell));
}

}  // namespace detail

/// Feature composition: push every code through G1, weight each feature
/// map channel-wise by its importance vector, sum, and complete the image
/// with G2.
inline Tensor compose(const Generator& g, const MultiCodeState& state) {
    detail::check_state(g, state);
    auto [g1, g2] = g.split(state.ell);
    Tensor composed;
    for (std::size_t n = 0; n < state.codes.size(); ++n) {
        Tensor scaled = channel_scale(g1.apply(state.codes[n]), state.importances[n]);
        composed = n == 0 ? scaled : add(composed, scaled);
    }
    return g2.apply(composed);
}

/// Fresh optimization state: codes drawn from a seeded standard normal
/// (or copied from the caller under from_codes), importances at 1/N.
inline MultiCodeState init_state(const InversionConfig& config, const Generator& g) {
    if (config.num_codes < 1) throw ContractError("init_state: num_codes must be >= 1");
    const FeatureShape f = g.feature_shape(config.ell);
    MultiCodeState state;
    state.ell = config.ell;
    Rng rng(config.seed);
    for (std::size_t n = 0; n < config.num_codes; ++n) {
        Tensor z;
        if (config.init_policy == InitPolicy::from_codes) {
            if (config.init_codes.size() != config.num_codes)
                throw ContractError("init_state: from_codes needs " +
                                    std::to_string(config.num_codes) + " codes, got " +
                                    std::to_string(config.init_codes.size()));
            z = config.init_codes[n].clone();
            if (z.shape() != Shape{1, g.latent_dim(), 1, 1})
                throw ShapeError("init_state: provided code " + detail::shape_str(z.shape()) +
                                 " must be [1," + std::to_string(g.latent_dim()) + ",1,1]");
        } else {
            z = Tensor::randn({1, g.latent_dim(), 1, 1}, rng);
        }
        z.set_requires_grad(true);
        state.codes.push_back(std::move(z));
        Tensor a = Tensor::full({f.channels}, 1.0 / static_cast<double>(config.num_codes));
        a.set_requires_grad(true);
        state.importances.push_back(std::move(a));
    }
    return state;
}

/// Shifts every latent code by magnitude * direction; importances are
/// untouched. Returns an independent copy.
inline MultiCodeState manipulate(const MultiCodeState& state, const Tensor& direction,
                                 double magnitude) {
    MultiCodeState edited;
    edited.ell = state.ell;
    for (const Tensor& z : state.codes) {
        if (!z.same_shape(direction))
            throw ShapeError("manipulate: direction " + detail::shape_str(direction.shape()) +
                             " does not match code " + detail::shape_str(z.shape()));
        Tensor moved = z.clone();
        double* dst = moved.values_mut().data();
        const double* dir = direction.values().data();
        for (std::size_t i = 0; i < moved.numel(); ++i) dst[i] += magnitude * dir[i];
        moved.set_requires_grad(true);
        edited.codes.push_back(std::move(moved));
    }
    for (const Tensor& a : state.importances) {
        Tensor copy = a.clone();
        copy.set_requires_grad(true);
        edited.importances.push_back(std::move(copy));
    }
    return edited;
}

namespace detail {

/// Adam over a fixed parameter group. Parameters with no gradient after a
/// backward pass are treated as having zero gradient.
class Adam {
public:
    Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const Tensor& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }

    void step() {
        ++t_;
        const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t p = 0; p < params_.size(); ++p) {
            Tensor& param = params_[p];
            const bool has = param.has_grad();
            const double* g = has ? param.grad().data() : nullptr;
            double* x = param.values_mut().data();
            double* m = m_[p].data();
            double* v = v_[p].data();
            for (std::size_t i = 0; i < param.numel(); ++i) {
                const double gi = has ? g[i] : 0.0;
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
                const double mhat = m[i] / bias1;
                const double vhat = v[i] / bias2;
                x[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    void zero_grad() {
        for (Tensor& p : params_) p.zero_grad();
    }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

/// Task objective with the reference-side features extracted once. Values
/// are bit-identical to task_loss_terms; only the redundant per-step
/// recomputation of the frozen reference features is dropped.
class PreparedObjective {
public:
    PreparedObjective(const TaskSpec& spec, const PerceptualExtractor& phi)
        : spec_(spec), phi_(phi) {
        NoGradGuard no_grad;
        switch (spec.kind) {
            case TaskKind::inpaint:
                mask3_ = replicate_channels(spec.mask, 3);
                ref_processed_ = elementwise_mul(spec.reference, mask3_);
                break;
            default:
                ref_processed_ = spec.reference;
        }
        ref_features_ = phi.extract(lift_to_rgb(ref_processed_));
    }

    LossTerms eval(const Tensor& x_inv) const {
        Tensor cand;
        switch (spec_.kind) {
            case TaskKind::reconstruct:
            case TaskKind::denoise:
                cand = x_inv;
                break;
            case TaskKind::colorize:
                cand = gray(x_inv);
                break;
            case TaskKind::super_resolve:
                cand = down(x_inv, spec_.sr_factor);
                break;
            case TaskKind::inpaint:
                cand = elementwise_mul(x_inv, mask3_);
                break;
        }
        require_same_shape(cand, ref_processed_, "loss");
        Tensor pixel = mul_scalar(l2_norm_sq(sub(cand, ref_processed_)), spec_.pixel_weight);
        Tensor perceptual = mul_scalar(l1_dist(phi_.extract(lift_to_rgb(cand)), ref_features_),
                                       spec_.perceptual_weight);
        return {pixel, perceptual, add(pixel, perceptual)};
    }

private:
    const TaskSpec& spec_;
    const PerceptualExtractor& phi_;
    Tensor ref_processed_;
    Tensor ref_features_;
    Tensor mask3_;
};

inline std::string param_norms(const MultiCodeState& state) {
    double zmax = 0.0, amax = 0.0;
    for (const Tensor& z : state.codes)
        for (double v : z.values()) zmax = std::max(zmax, std::abs(v));
    for (const Tensor& a : state.importances)
        for (double v : a.values()) amax = std::max(amax, std::abs(v));
    std::ostringstream os;
    os << "max|z| = " << zmax << ", max|alpha| = " << amax;
    return os.str();
}

}  // namespace detail

/// Joint gradient descent of all codes and importance vectors against the
/// task objective. Deterministic given the config seed. The trace holds
/// the loss at every step before its update, plus a final entry for the
/// returned state.
inline InversionResult invert(const Generator& g, const PerceptualExtractor& phi,
                              const TaskSpec& spec, const InversionConfig& config) {
    if (config.steps < 1) throw ContractError("invert: steps must be >= 1");
    if (!(config.learning_rate > 0)) throw ContractError("invert: learning_rate must be > 0");

    const auto t0 = std::chrono::steady_clock::now();
    Tape& tape = Tape::active();
    tape.reset();

    MultiCodeState state = init_state(config, g);
    std::vector<Tensor> params;
    for (const Tensor& z : state.codes) params.push_back(z);
    for (const Tensor& a : state.importances) params.push_back(a);
    detail::Adam adam(params, config.learning_rate, config.adam_beta1, config.adam_beta2,
                      config.adam_eps);
    detail::PreparedObjective objective(spec, phi);

    InversionResult result;
    for (std::size_t step = 0; step < config.steps; ++step) {
        tape.reset();
        Tensor x = compose(g, state);
        LossTerms terms = objective.eval(x);
        const double total = terms.total.item();
        if (!std::isfinite(total)) {
            tape.reset();
            throw NumericError("invert: non-finite loss at step " + std::to_string(step) + " (" +
                               detail::param_norms(state) + ")");
        }
        result.loss_trace.push_back({step, terms.pixel.item(), terms.perceptual.item(), total});
        tape.backward(terms.total);
        adam.step();
        adam.zero_grad();
    }
    tape.reset();

    {
        NoGradGuard no_grad;
        result.image = compose(g, state);
        LossTerms terms = objective.eval(result.image);
        result.loss_trace.push_back(
            {config.steps, terms.pixel.item(), terms.perceptual.item(), terms.total.item()});
    }
    result.final_state = std::move(state);
    result.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

// ---------------------------------------------------------------------------
// Result serialization

inline void write_trace_csv(const std::vector<TracePoint>& trace,
                            const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ParseError(path.string() + ": cannot open file for writing");
    out << "step,pixel,perceptual,total\n";
    out << std::setprecision(17);
    for (const TracePoint& p : trace)
        out << p.step << ',' << p.pixel << ',' << p.perceptual << ',' << p.total << '\n';
}

/// Writes codes and importances as MTD1 tensors plus a plain-text manifest.
inline void save_state(const MultiCodeState& state, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "state.txt", std::ios::trunc);
    if (!manifest) throw ParseError((dir / "state.txt").string() + ": cannot open for writing");
    manifest << "num_codes " << state.codes.size() << "\n";
    manifest << "ell " << state.ell << "\n";
    manifest.close();
    for (std::size_t n = 0; n < state.codes.size(); ++n) {
        std::ostringstream zs, as;
        zs << "code_" << std::setw(3) << std::setfill('0') << n << ".mtd";
        as << "alpha_" << std::setw(3) << std::setfill('0') << n << ".mtd";
        write_mtd(state.codes[n], dir / zs.str());
        write_mtd(state.importances[n], dir / as.str());
    }
}

inline MultiCodeState load_state(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "state.txt");
    if (!manifest) throw ParseError((dir / "state.txt").string() + ": cannot open state manifest");
    std::string key;
    std::size_t num_codes = 0;
    long ell = 0;
    manifest >> key >> num_codes;
    if (key != "num_codes") throw ParseError((dir / "state.txt").string() + ": malformed manifest");
    manifest >> key >> ell;
    if (key != "ell") throw ParseError((dir / "state.txt").string() + ": malformed manifest");
    MultiCodeState state;
    state.ell = ell;
    for (std::size_t n = 0; n < num_codes; ++n) {
        std::ostringstream zs, as;
        zs << "code_" << std::setw(3) << std::setfill('0') << n << ".mtd";
        as << "alpha_" << std::setw(3) << std::setfill('0') << n << ".mtd";
        Tensor z = read_mtd(dir / zs.str());
        Tensor a = read_mtd(dir / as.str());
        z.set_requires_grad(true);
        a.set_requires_grad(true);
        state.codes.push_back(std::move(z));
        state.importances.push_back(std::move(a));
    }
    return state;
}

}  // namespace mgp
