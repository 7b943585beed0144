#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mgp/error.hpp"
#include "mgp/rng.hpp"
#include "mgp/tensor.hpp"

namespace mgp {

enum class LayerKind : std::uint8_t {
    conv = 0,
    conv_transpose = 1,
    leaky_relu = 2,
    tanh = 3,
    nearest_upsample = 4,
};

/// One frozen layer of a generator or feature extractor. Parameters never
/// require gradients; the networks stay fixed while latent codes move.
struct LayerSpec {
    LayerKind kind = LayerKind::tanh;
    Tensor weight;
    Tensor bias;
    long stride = 1;
    long padding = 0;
    double slope = 0.2;
    std::size_t factor = 2;

    static LayerSpec make_conv(Tensor weight, Tensor bias, long stride, long padding) {
        validate_weighted(weight, bias, weight.extent(0), "conv");
        LayerSpec l;
        l.kind = LayerKind::conv;
        l.weight = std::move(weight);
        l.bias = std::move(bias);
        l.stride = stride;
        l.padding = padding;
        return l;
    }

    static LayerSpec make_conv_transpose(Tensor weight, Tensor bias, long stride, long padding) {
        validate_weighted(weight, bias, weight.extent(1), "conv_transpose");
        LayerSpec l;
        l.kind = LayerKind::conv_transpose;
        l.weight = std::move(weight);
        l.bias = std::move(bias);
        l.stride = stride;
        l.padding = padding;
        return l;
    }

    static LayerSpec make_leaky_relu(double slope) {
        LayerSpec l;
        l.kind = LayerKind::leaky_relu;
        l.slope = slope;
        return l;
    }

    static LayerSpec make_tanh() {
        LayerSpec l;
        l.kind = LayerKind::tanh;
        return l;
    }

    static LayerSpec make_nearest_upsample(std::size_t factor) {
        if (factor < 2) throw ContractError("nearest_upsample layer: factor must be >= 2");
        LayerSpec l;
        l.kind = LayerKind::nearest_upsample;
        l.factor = factor;
        return l;
    }

    bool weighted() const {
        return kind == LayerKind::conv || kind == LayerKind::conv_transpose;
    }

    std::size_t in_channels() const {
        return kind == LayerKind::conv ? weight.extent(1) : weight.extent(0);
    }

    std::size_t out_channels() const {
        return kind == LayerKind::conv ? weight.extent(0) : weight.extent(1);
    }

    Tensor apply(const Tensor& x) const {
        switch (kind) {
            case LayerKind::conv:
                return conv2d(x, weight, bias, stride, padding);
            case LayerKind::conv_transpose:
                return conv_transpose2d(x, weight, bias, stride, padding);
            case LayerKind::leaky_relu:
                return mgp::leaky_relu(x, slope);
            case LayerKind::tanh:
                return mgp::tanh(x);
            case LayerKind::nearest_upsample:
                return mgp::nearest_upsample(x, factor);
        }
        throw ContractError("apply: unknown layer kind");
    }

private:
    static void validate_weighted(const Tensor& weight, const Tensor& bias,
                                  std::size_t out_channels, const char* kind) {
        if (weight.rank() != 4)
            throw ShapeError(std::string(kind) + " layer: weight must be rank 4, got " +
                             detail::shape_str(weight.shape()));
        if (bias.shape() != Shape{out_channels})
            throw ShapeError(std::string(kind) + " layer: bias " +
                             detail::shape_str(bias.shape()) + " must be [" +
                             std::to_string(out_channels) + "]");
        if (weight.requires_grad() || bias.requires_grad())
            throw ContractError(std::string(kind) + " layer: model parameters are frozen and "
                                                    "must not require gradients");
    }
};

struct FeatureShape {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
};

namespace detail {

inline Tensor apply_layers(const std::vector<LayerSpec>& layers, Tensor x) {
    for (const LayerSpec& l : layers) x = l.apply(x);
    return x;
}

inline FeatureShape infer_shape(const LayerSpec& l, FeatureShape in) {
    switch (l.kind) {
        case LayerKind::conv: {
            const long k = static_cast<long>(l.weight.extent(2));
            const long h = (static_cast<long>(in.height) + 2 * l.padding - k) / l.stride + 1;
            const long w = (static_cast<long>(in.width) + 2 * l.padding - k) / l.stride + 1;
            if (h < 1 || w < 1) throw ShapeError("conv layer produces empty output");
            return {l.out_channels(), static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
        }
        case LayerKind::conv_transpose: {
            const long k = static_cast<long>(l.weight.extent(2));
            const long h = (static_cast<long>(in.height) - 1) * l.stride - 2 * l.padding + k;
            const long w = (static_cast<long>(in.width) - 1) * l.stride - 2 * l.padding + k;
            if (h < 1 || w < 1) throw ShapeError("conv_transpose layer produces empty output");
            return {l.out_channels(), static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
        }
        case LayerKind::nearest_upsample:
            return {in.channels, in.height * l.factor, in.width * l.factor};
        default:
            return in;
    }
}

}  // namespace detail

/// An ordered slice of a generator, produced by Generator::split.
struct SubNetwork {
    std::vector<LayerSpec> layers;

    Tensor apply(const Tensor& x) const { return detail::apply_layers(layers, x); }
};

/// The frozen generator G. Latents of shape [1,D,1,1] map to images
/// [1,3,H,W] in [-1,1]; split(ell) divides it into the feature producer
/// G1 and the image completer G2 around the ell-th weighted block.
class Generator {
public:
    explicit Generator(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
        if (layers_.empty()) throw ContractError("generator: empty layer list");
        for (std::size_t i = 0; i < layers_.size(); ++i)
            if (layers_[i].weighted()) weighted_positions_.push_back(i);
        if (weighted_positions_.size() < 2)
            throw ContractError("generator: needs at least two weighted layers to split");
        if (!layers_.front().weighted())
            throw ContractError("generator: first layer must be weighted");
        if (layers_.back().kind != LayerKind::tanh)
            throw ContractError("generator: final layer must be tanh");
        latent_dim_ = layers_.front().in_channels();

        // Chain the weighted layers to validate channel bookkeeping and
        // record the feature shape at every candidate split.
        FeatureShape shape{latent_dim_, 1, 1};
        std::size_t next_weighted = 0;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const LayerSpec& l = layers_[i];
            if (l.weighted()) {
                if (l.in_channels() != shape.channels)
                    throw ShapeError("generator: layer " + std::to_string(i) + " expects " +
                                     std::to_string(l.in_channels()) + " channels but receives " +
                                     std::to_string(shape.channels));
                ++next_weighted;
            }
            shape = detail::infer_shape(l, shape);
            // A split candidate ends right before the next weighted layer.
            const bool last_layer = i + 1 == layers_.size();
            const bool before_weighted = !last_layer && layers_[i + 1].weighted();
            if (before_weighted && next_weighted < weighted_positions_.size()) {
                split_shapes_.push_back(shape);
                split_positions_.push_back(i + 1);
            }
        }
        output_shape_ = shape;
        for (const FeatureShape& s : split_shapes_) layer_channel_counts_.push_back(s.channels);
    }

    std::size_t latent_dim() const { return latent_dim_; }
    std::size_t weighted_layer_count() const { return weighted_positions_.size(); }
    std::size_t split_candidates() const { return split_positions_.size(); }
    const std::vector<std::size_t>& layer_channel_counts() const { return layer_channel_counts_; }
    const std::vector<LayerSpec>& layers() const { return layers_; }
    FeatureShape output_shape() const { return output_shape_; }

    FeatureShape feature_shape(long ell) const {
        check_ell(ell);
        return split_shapes_[static_cast<std::size_t>(ell - 1)];
    }

    Tensor forward(const Tensor& z) const {
        if (z.shape() != Shape{1, latent_dim_, 1, 1})
            throw ShapeError("generator: latent " + detail::shape_str(z.shape()) +
                             " must be [1," + std::to_string(latent_dim_) + ",1,1]");
        return detail::apply_layers(layers_, z);
    }

    std::pair<SubNetwork, SubNetwork> split(long ell) const {
        check_ell(ell);
        const std::size_t cut = split_positions_[static_cast<std::size_t>(ell - 1)];
        SubNetwork g1{{layers_.begin(), layers_.begin() + static_cast<std::ptrdiff_t>(cut)}};
        SubNetwork g2{{layers_.begin() + static_cast<std::ptrdiff_t>(cut), layers_.end()}};
        return {std::move(g1), std::move(g2)};
    }

private:
    void check_ell(long ell) const {
        if (ell < 1 || static_cast<std::size_t>(ell) > split_positions_.size())
            throw ContractError("split: layer index " + std::to_string(ell) +
                                " outside valid range [1," +
                                std::to_string(split_positions_.size()) + "]");
    }

    std::vector<LayerSpec> layers_;
    std::vector<std::size_t> weighted_positions_;
    std::vector<std::size_t> split_positions_;
    std::vector<FeatureShape> split_shapes_;
    std::vector<std::size_t> layer_channel_counts_;
    std::size_t latent_dim_ = 0;
    FeatureShape output_shape_;
};

/// The frozen perceptual feature extractor phi. Deterministic, frozen,
/// differentiable with respect to its input image.
class PerceptualExtractor {
public:
    explicit PerceptualExtractor(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
        if (layers_.empty()) throw ContractError("extractor: empty layer list");
        std::size_t channels = 0;
        bool seen_weighted = false;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const LayerSpec& l = layers_[i];
            if (l.kind == LayerKind::tanh)
                throw ContractError("extractor: tanh output layers belong to generators");
            if (!l.weighted()) continue;
            if (!seen_weighted) {
                if (l.in_channels() != 3)
                    throw ShapeError("extractor: first weighted layer must take 3 channels, got " +
                                     std::to_string(l.in_channels()));
                seen_weighted = true;
            } else if (l.in_channels() != channels) {
                throw ShapeError("extractor: layer " + std::to_string(i) + " expects " +
                                 std::to_string(l.in_channels()) + " channels but receives " +
                                 std::to_string(channels));
            }
            channels = l.out_channels();
        }
        if (!seen_weighted) throw ContractError("extractor: needs at least one weighted layer");
        output_channels_ = channels;
    }

    std::size_t output_channels() const { return output_channels_; }
    const std::vector<LayerSpec>& layers() const { return layers_; }

    Tensor extract(const Tensor& image) const {
        if (image.rank() != 4 || image.extent(0) != 1 || image.extent(1) != 3)
            throw ShapeError("extractor: image " + detail::shape_str(image.shape()) +
                             " must be [1,3,H,W]");
        return detail::apply_layers(layers_, image);
    }

private:
    std::vector<LayerSpec> layers_;
    std::size_t output_channels_ = 0;
};

inline Tensor extract_features(const PerceptualExtractor& phi, const Tensor& image) {
    return phi.extract(image);
}

namespace detail {

// Fan-in scaled normal init with the He gain for the 0.2 leaky slope.
// The gain keeps activation variance roughly constant through the stack;
// without it nine layers of leaky_relu shrink every image to near black.
inline Tensor init_weight(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor w = Tensor::zeros(std::move(shape));
    const double gain = std::sqrt(2.0 / (1.0 + 0.2 * 0.2));
    const double scale = gain / std::sqrt(static_cast<double>(fan_in));
    for (double& v : w.values_mut()) v = rng.normal() * scale;
    return w;
}

}  // namespace detail

/// Seeded stand-in for a pre-trained generator: `depth` transposed-conv
/// blocks with leaky_relu, a to-RGB conv and a tanh. Block 1 maps the
/// 1x1 latent to 4x4; every following odd block doubles the resolution.
/// Channel widths halve every two blocks from `base_channels` down to
/// `base_channels/8`.
inline Generator make_toy_generator(std::uint64_t seed, std::size_t depth, std::size_t latent_dim,
                                    std::size_t base_channels = 256) {
    if (depth < 2) throw ContractError("make_toy_generator: depth must be >= 2");
    if (latent_dim < 1) throw ContractError("make_toy_generator: latent_dim must be >= 1");
    if (base_channels < 8 || base_channels % 8 != 0)
        throw ContractError("make_toy_generator: base_channels must be a positive multiple of 8");

    Rng rng(seed);
    std::vector<LayerSpec> layers;
    const std::size_t min_channels = base_channels / 8;
    std::size_t in_c = latent_dim;
    for (std::size_t i = 1; i <= depth; ++i) {
        const std::size_t out_c = std::max(base_channels >> ((i - 1) / 2), min_channels);
        std::size_t k = 3;
        long stride = 1, padding = 1;
        if (i == 1) {
            k = 4;
            stride = 1;
            padding = 0;
        } else if (i % 2 == 1) {
            k = 4;
            stride = 2;
            padding = 1;
        }
        // Effective fan-in of a transposed conv is the taps actually
        // feeding one output position: 1 for the 1x1-input head block,
        // k^2/s^2 for the others.
        const std::size_t taps = i == 1 ? 1
                                        : static_cast<std::size_t>(k * k) /
                                              static_cast<std::size_t>(stride * stride);
        Tensor w = detail::init_weight({in_c, out_c, k, k}, in_c * taps, rng);
        layers.push_back(LayerSpec::make_conv_transpose(std::move(w), Tensor::zeros({out_c}),
                                                        stride, padding));
        layers.push_back(LayerSpec::make_leaky_relu(0.2));
        in_c = out_c;
    }
    Tensor head = detail::init_weight({3, in_c, 3, 3}, in_c * 9, rng);
    layers.push_back(LayerSpec::make_conv(std::move(head), Tensor::zeros({3}), 1, 1));
    layers.push_back(LayerSpec::make_tanh());
    return Generator(std::move(layers));
}

/// Seeded stand-in for a pre-trained perceptual network: four convs with
/// leaky_relu, the first two downsampling by stride 2.
inline PerceptualExtractor make_toy_extractor(std::uint64_t seed, std::size_t base_channels = 32) {
    if (base_channels < 1) throw ContractError("make_toy_extractor: base_channels must be >= 1");
    Rng rng(seed);
    std::vector<LayerSpec> layers;
    const std::size_t c1 = base_channels, c2 = 2 * base_channels;
    struct Plan {
        std::size_t in, out;
        long stride;
    };
    for (const Plan& p : {Plan{3, c1, 2}, Plan{c1, c2, 2}, Plan{c2, c2, 1}, Plan{c2, c2, 1}}) {
        Tensor w = detail::init_weight({p.out, p.in, 3, 3}, p.in * 9, rng);
        layers.push_back(LayerSpec::make_conv(std::move(w), Tensor::zeros({p.out}), p.stride, 1));
        layers.push_back(LayerSpec::make_leaky_relu(0.2));
    }
    return PerceptualExtractor(std::move(layers));
}

inline Tensor forward(const Generator& g, const Tensor& z) { return g.forward(z); }

}  // namespace mgp
