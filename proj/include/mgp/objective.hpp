#pragma once

#include <string>

#include "mgp/error.hpp"
#include "mgp/model.hpp"
#include "mgp/tensor.hpp"

namespace mgp {

/// Luma channel of an RGB image (BT.601 weights).
inline Tensor gray(const Tensor& image) {
    if (image.rank() != 4 || image.extent(1) != 3)
        throw ShapeError("gray: image " + detail::shape_str(image.shape()) + " must be [B,3,H,W]");
    const std::size_t B = image.extent(0), H = image.extent(2), W = image.extent(3);
    const std::size_t plane = H * W;
    Tensor out = Tensor::zeros({B, 1, H, W});
    const double* xv = image.values().data();
    double* ov = out.values_mut().data();
    constexpr double wr = 0.299, wg = 0.587, wb = 0.114;
    for (std::size_t b = 0; b < B; ++b) {
        const double* r = xv + (b * 3 + 0) * plane;
        const double* g = xv + (b * 3 + 1) * plane;
        const double* bl = xv + (b * 3 + 2) * plane;
        double* dst = ov + b * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = wr * r[i] + wg * g[i] + wb * bl[i];
    }
    if (detail::grad_enabled() && detail::needs_grad(image.impl())) {
        auto xi = image.impl(), oi = out.impl();
        detail::mark_and_record(out, [xi, oi, B, plane] {
            detail::ensure_grad(*xi);
            for (std::size_t b = 0; b < B; ++b) {
                const double* g = oi->grad.data() + b * plane;
                double* r = xi->grad.data() + (b * 3 + 0) * plane;
                double* gg = xi->grad.data() + (b * 3 + 1) * plane;
                double* bl = xi->grad.data() + (b * 3 + 2) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    r[i] += wr * g[i];
                    gg[i] += wg * g[i];
                    bl[i] += wb * g[i];
                }
            }
        });
    }
    return out;
}

/// k-by-k average pooling; the downsampling operator of the SR task.
inline Tensor down(const Tensor& image, std::size_t k) {
    if (image.rank() != 4)
        throw ShapeError("down: image " + detail::shape_str(image.shape()) + " must be rank 4");
    if (k < 1) throw ContractError("down: factor must be >= 1");
    const std::size_t B = image.extent(0), C = image.extent(1);
    const std::size_t H = image.extent(2), W = image.extent(3);
    if (H % k != 0 || W % k != 0)
        throw ShapeError("down: factor " + std::to_string(k) + " does not divide " +
                         detail::shape_str(image.shape()));
    const std::size_t Ho = H / k, Wo = W / k;
    Tensor out = Tensor::zeros({B, C, Ho, Wo});
    const double inv = 1.0 / static_cast<double>(k * k);
    const double* xv = image.values().data();
    double* ov = out.values_mut().data();
    for (std::size_t bc = 0; bc < B * C; ++bc)
        for (std::size_t ho = 0; ho < Ho; ++ho)
            for (std::size_t wo = 0; wo < Wo; ++wo) {
                double acc = 0.0;
                for (std::size_t dh = 0; dh < k; ++dh) {
                    const double* row = xv + (bc * H + ho * k + dh) * W + wo * k;
                    for (std::size_t dw = 0; dw < k; ++dw) acc += row[dw];
                }
                ov[(bc * Ho + ho) * Wo + wo] = acc * inv;
            }
    if (detail::grad_enabled() && detail::needs_grad(image.impl())) {
        auto xi = image.impl(), oi = out.impl();
        detail::mark_and_record(out, [xi, oi, B, C, H, W, k, inv] {
            detail::ensure_grad(*xi);
            const std::size_t Ho = H / k, Wo = W / k;
            for (std::size_t bc = 0; bc < B * C; ++bc)
                for (std::size_t ho = 0; ho < Ho; ++ho)
                    for (std::size_t wo = 0; wo < Wo; ++wo) {
                        const double g = oi->grad[(bc * Ho + ho) * Wo + wo] * inv;
                        for (std::size_t dh = 0; dh < k; ++dh) {
                            double* row = xi->grad.data() + (bc * H + ho * k + dh) * W + wo * k;
                            for (std::size_t dw = 0; dw < k; ++dw) row[dw] += g;
                        }
                    }
        });
    }
    return out;
}

/// Weighted pixel and perceptual terms of the reconstruction objective,
/// kept separate for loss traces. pixel + perceptual == total.
struct LossTerms {
    Tensor pixel;
    Tensor perceptual;
    Tensor total;
};

namespace detail {

inline Tensor lift_to_rgb(const Tensor& x) {
    return x.extent(1) == 1 ? replicate_channels(x, 3) : x;
}

}  // namespace detail

inline LossTerms loss_terms(const Tensor& x1, const Tensor& x2, const PerceptualExtractor& phi,
                            double wp, double wf) {
    detail::require_same_shape(x1, x2, "loss");
    if (wp < 0 || wf < 0) throw ContractError("loss: weights must be non-negative");
    if (x1.rank() != 4 || (x1.extent(1) != 3 && x1.extent(1) != 1))
        throw ShapeError("loss: image " + detail::shape_str(x1.shape()) +
                         " must be [B,3,H,W] or [B,1,H,W]");
    Tensor pixel = mul_scalar(l2_norm_sq(sub(x1, x2)), wp);
    Tensor perceptual = mul_scalar(
        l1_dist(phi.extract(detail::lift_to_rgb(x1)), phi.extract(detail::lift_to_rgb(x2))), wf);
    return {pixel, perceptual, add(pixel, perceptual)};
}

/// Composite reconstruction objective: weighted pixel squared error plus
/// the l1 distance between perceptual features. Single-channel inputs are
/// lifted to three identical channels before the extractor.
inline Tensor loss(const Tensor& x1, const Tensor& x2, const PerceptualExtractor& phi, double wp,
                   double wf) {
    return loss_terms(x1, x2, phi, wp, wf).total;
}

enum class TaskKind { reconstruct, colorize, super_resolve, inpaint, denoise };

inline std::string task_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::reconstruct: return "reconstruct";
        case TaskKind::colorize: return "colorize";
        case TaskKind::super_resolve: return "super_resolve";
        case TaskKind::inpaint: return "inpaint";
        case TaskKind::denoise: return "denoise";
    }
    return "unknown";
}

/// Degradation task: which objective to optimize and against what
/// reference. The mask marks known pixels with 1 and missing ones with 0.
struct TaskSpec {
    TaskKind kind = TaskKind::reconstruct;
    Tensor reference;
    std::size_t sr_factor = 1;
    Tensor mask;
    double pixel_weight = 1.0;
    double perceptual_weight = 1.0;

    static TaskSpec reconstruct(Tensor target, double wp = 1.0, double wf = 1.0) {
        return make(TaskKind::reconstruct, std::move(target), wp, wf);
    }

    static TaskSpec denoise(Tensor noisy_target, double wp = 1.0, double wf = 1.0) {
        return make(TaskKind::denoise, std::move(noisy_target), wp, wf);
    }

    static TaskSpec colorize(Tensor gray_reference, double wp = 1.0, double wf = 1.0) {
        if (gray_reference.rank() != 4 || gray_reference.extent(1) != 1)
            throw ShapeError("colorize: reference " +
                             detail::shape_str(gray_reference.shape()) + " must be [1,1,H,W]");
        return make(TaskKind::colorize, std::move(gray_reference), wp, wf);
    }

    static TaskSpec super_resolve(Tensor low_res, std::size_t factor, double wp = 1.0,
                                  double wf = 1.0) {
        if (factor < 1) throw ContractError("super_resolve: factor must be >= 1");
        TaskSpec s = make(TaskKind::super_resolve, std::move(low_res), wp, wf);
        s.sr_factor = factor;
        return s;
    }

    static TaskSpec inpaint(Tensor original, Tensor mask, double wp = 1.0, double wf = 1.0) {
        if (mask.rank() != 4 || mask.extent(1) != 1)
            throw ShapeError("inpaint: mask " + detail::shape_str(mask.shape()) +
                             " must be [1,1,H,W]");
        if (original.rank() != 4 || original.extent(2) != mask.extent(2) ||
            original.extent(3) != mask.extent(3))
            throw ShapeError("inpaint: mask " + detail::shape_str(mask.shape()) +
                             " does not cover image " + detail::shape_str(original.shape()));
        for (double v : mask.values())
            if (v != 0.0 && v != 1.0)
                throw ContractError("inpaint: mask values must be exactly 0 or 1");
        TaskSpec s = make(TaskKind::inpaint, std::move(original), wp, wf);
        s.mask = std::move(mask);
        return s;
    }

private:
    static TaskSpec make(TaskKind kind, Tensor reference, double wp, double wf) {
        TaskSpec s;
        s.kind = kind;
        s.reference = std::move(reference);
        s.pixel_weight = wp;
        s.perceptual_weight = wf;
        return s;
    }
};

/// Task objective evaluated on a candidate reconstruction. Masking happens
/// before the extractor, so fully masked-out pixels cannot influence
/// either loss term.
inline LossTerms task_loss_terms(const TaskSpec& spec, const Tensor& x_inv,
                                 const PerceptualExtractor& phi) {
    const double wp = spec.pixel_weight, wf = spec.perceptual_weight;
    switch (spec.kind) {
        case TaskKind::reconstruct:
        case TaskKind::denoise:
            return loss_terms(x_inv, spec.reference, phi, wp, wf);
        case TaskKind::colorize:
            return loss_terms(gray(x_inv), spec.reference, phi, wp, wf);
        case TaskKind::super_resolve:
            return loss_terms(down(x_inv, spec.sr_factor), spec.reference, phi, wp, wf);
        case TaskKind::inpaint: {
            Tensor m3 = replicate_channels(spec.mask, 3);
            return loss_terms(elementwise_mul(x_inv, m3), elementwise_mul(spec.reference, m3),
                              phi, wp, wf);
        }
    }
    throw ContractError("task_loss: unknown task kind");
}

inline Tensor task_loss(const TaskSpec& spec, const Tensor& x_inv,
                        const PerceptualExtractor& phi) {
    return task_loss_terms(spec, x_inv, phi).total;
}

}  // namespace mgp
