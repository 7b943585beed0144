#pragma once

// Independent brute-force references used only by the test suites. These
// stay deliberately naive so they share no code path with the library
// kernels they check.

#include <cmath>
#include <cstddef>

#include "mgp/tensor.hpp"

namespace oracle {

inline mgp::Tensor conv2d_naive(const mgp::Tensor& x, const mgp::Tensor& w, const mgp::Tensor& b,
                                long stride, long padding) {
    const long B = static_cast<long>(x.extent(0));
    const long Ci = static_cast<long>(x.extent(1));
    const long H = static_cast<long>(x.extent(2));
    const long W = static_cast<long>(x.extent(3));
    const long Co = static_cast<long>(w.extent(0));
    const long k = static_cast<long>(w.extent(2));
    const long Ho = (H + 2 * padding - k) / stride + 1;
    const long Wo = (W + 2 * padding - k) / stride + 1;
    mgp::Tensor out = mgp::Tensor::zeros({static_cast<std::size_t>(B), static_cast<std::size_t>(Co),
                                          static_cast<std::size_t>(Ho),
                                          static_cast<std::size_t>(Wo)});
    for (long bb = 0; bb < B; ++bb)
        for (long co = 0; co < Co; ++co)
            for (long ho = 0; ho < Ho; ++ho)
                for (long wo = 0; wo < Wo; ++wo) {
                    double acc = b.values()[static_cast<std::size_t>(co)];
                    for (long ci = 0; ci < Ci; ++ci)
                        for (long kh = 0; kh < k; ++kh)
                            for (long kw = 0; kw < k; ++kw) {
                                const long ih = ho * stride + kh - padding;
                                const long iw = wo * stride + kw - padding;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += x.at({static_cast<std::size_t>(bb),
                                             static_cast<std::size_t>(ci),
                                             static_cast<std::size_t>(ih),
                                             static_cast<std::size_t>(iw)}) *
                                       w.at({static_cast<std::size_t>(co),
                                             static_cast<std::size_t>(ci),
                                             static_cast<std::size_t>(kh),
                                             static_cast<std::size_t>(kw)});
                            }
                    out.at({static_cast<std::size_t>(bb), static_cast<std::size_t>(co),
                            static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)}) = acc;
                }
    return out;
}

inline mgp::Tensor conv_transpose2d_naive(const mgp::Tensor& x, const mgp::Tensor& w,
                                          const mgp::Tensor& b, long stride, long padding) {
    const long B = static_cast<long>(x.extent(0));
    const long Ci = static_cast<long>(x.extent(1));
    const long H = static_cast<long>(x.extent(2));
    const long W = static_cast<long>(x.extent(3));
    const long Co = static_cast<long>(w.extent(1));
    const long k = static_cast<long>(w.extent(2));
    const long Ho = (H - 1) * stride - 2 * padding + k;
    const long Wo = (W - 1) * stride - 2 * padding + k;
    mgp::Tensor out = mgp::Tensor::zeros({static_cast<std::size_t>(B), static_cast<std::size_t>(Co),
                                          static_cast<std::size_t>(Ho),
                                          static_cast<std::size_t>(Wo)});
    for (long bb = 0; bb < B; ++bb)
        for (long co = 0; co < Co; ++co)
            for (long oh = 0; oh < Ho; ++oh)
                for (long ow = 0; ow < Wo; ++ow)
                    out.at({static_cast<std::size_t>(bb), static_cast<std::size_t>(co),
                            static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)}) =
                        b.values()[static_cast<std::size_t>(co)];
    for (long bb = 0; bb < B; ++bb)
        for (long ci = 0; ci < Ci; ++ci)
            for (long hi = 0; hi < H; ++hi)
                for (long wi = 0; wi < W; ++wi)
                    for (long co = 0; co < Co; ++co)
                        for (long kh = 0; kh < k; ++kh)
                            for (long kw = 0; kw < k; ++kw) {
                                const long oh = hi * stride + kh - padding;
                                const long ow = wi * stride + kw - padding;
                                if (oh < 0 || oh >= Ho || ow < 0 || ow >= Wo) continue;
                                out.at({static_cast<std::size_t>(bb), static_cast<std::size_t>(co),
                                        static_cast<std::size_t>(oh),
                                        static_cast<std::size_t>(ow)}) +=
                                    x.at({static_cast<std::size_t>(bb),
                                          static_cast<std::size_t>(ci),
                                          static_cast<std::size_t>(hi),
                                          static_cast<std::size_t>(wi)}) *
                                    w.at({static_cast<std::size_t>(ci),
                                          static_cast<std::size_t>(co),
                                          static_cast<std::size_t>(kh),
                                          static_cast<std::size_t>(kw)});
                            }
    return out;
}

inline double dot(const mgp::Tensor& a, const mgp::Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a.values()[i] * b.values()[i];
    return acc;
}

inline double max_abs_diff(const mgp::Tensor& a, const mgp::Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    return m;
}

inline bool bit_equal(const mgp::Tensor& a, const mgp::Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i)
        if (a.values()[i] != b.values()[i]) return false;
    return true;
}

}  // namespace oracle
