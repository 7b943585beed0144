#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "mgp/error.hpp"
#include "mgp/model.hpp"
#include "mgp/tensor_file.hpp"

namespace mgp {

// MGC1 checkpoint: magic "MGC1", u32 version, u32 layer count, then per
// layer a u8 kind tag followed by kind-specific fields. Weighted layers
// store u32 stride, u32 padding and the weight/bias tensors in embedded
// MTD1 form; leaky_relu stores its slope as an f64; nearest_upsample
// stores a u32 factor. Little-endian throughout.

namespace detail {

inline void encode_layers(std::string& out, const std::vector<LayerSpec>& layers) {
    out += "MGC1";
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(layers.size()));
    for (const LayerSpec& l : layers) {
        out.push_back(static_cast<char>(l.kind));
        switch (l.kind) {
            case LayerKind::conv:
            case LayerKind::conv_transpose:
                put_u32(out, static_cast<std::uint32_t>(l.stride));
                put_u32(out, static_cast<std::uint32_t>(l.padding));
                encode_mtd(out, l.weight);
                encode_mtd(out, l.bias);
                break;
            case LayerKind::leaky_relu:
                put_f64(out, l.slope);
                break;
            case LayerKind::tanh:
                break;
            case LayerKind::nearest_upsample:
                put_u32(out, static_cast<std::uint32_t>(l.factor));
                break;
        }
    }
}

inline std::vector<LayerSpec> decode_layers(ByteReader& r) {
    r.magic("MGC1");
    const std::uint32_t version = r.u32();
    if (version != 1)
        throw ParseError(r.origin() + ": unsupported checkpoint version " +
                         std::to_string(version));
    const std::uint32_t count = r.u32();
    std::vector<LayerSpec> layers;
    layers.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint8_t tag = r.u8();
        try {
            switch (static_cast<LayerKind>(tag)) {
                case LayerKind::conv: {
                    const long stride = static_cast<long>(r.u32());
                    const long padding = static_cast<long>(r.u32());
                    Tensor w = decode_mtd(r);
                    Tensor b = decode_mtd(r);
                    layers.push_back(
                        LayerSpec::make_conv(std::move(w), std::move(b), stride, padding));
                    break;
                }
                case LayerKind::conv_transpose: {
                    const long stride = static_cast<long>(r.u32());
                    const long padding = static_cast<long>(r.u32());
                    Tensor w = decode_mtd(r);
                    Tensor b = decode_mtd(r);
                    layers.push_back(LayerSpec::make_conv_transpose(std::move(w), std::move(b),
                                                                    stride, padding));
                    break;
                }
                case LayerKind::leaky_relu:
                    layers.push_back(LayerSpec::make_leaky_relu(r.f64()));
                    break;
                case LayerKind::tanh:
                    layers.push_back(LayerSpec::make_tanh());
                    break;
                case LayerKind::nearest_upsample:
                    layers.push_back(LayerSpec::make_nearest_upsample(r.u32()));
                    break;
                default:
                    throw ParseError(r.origin() + ": unknown layer kind tag " +
                                     std::to_string(tag) + " in layer " + std::to_string(i));
            }
        } catch (const ParseError&) {
            throw;
        } catch (const Error& e) {
            throw ParseError(r.origin() + ": shape-inconsistent weights in layer " +
                             std::to_string(i) + ": " + e.what());
        }
    }
    return layers;
}

}  // namespace detail

using Model = std::variant<Generator, PerceptualExtractor>;

inline void save_checkpoint(const std::vector<LayerSpec>& layers,
                            const std::filesystem::path& path) {
    std::string bytes;
    detail::encode_layers(bytes, layers);
    detail::write_file_bytes(path, bytes);
}

inline void save_checkpoint(const Generator& g, const std::filesystem::path& path) {
    save_checkpoint(g.layers(), path);
}

inline void save_checkpoint(const PerceptualExtractor& phi, const std::filesystem::path& path) {
    save_checkpoint(phi.layers(), path);
}

/// Loads either model kind; a trailing tanh marks a generator.
inline Model load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    detail::ByteReader r(bytes.data(), bytes.size(), path.string());
    std::vector<LayerSpec> layers = detail::decode_layers(r);
    if (!r.at_end())
        throw ParseError(path.string() + ": " + std::to_string(r.remaining()) +
                         " trailing bytes after layer payload");
    try {
        if (!layers.empty() && layers.back().kind == LayerKind::tanh)
            return Generator(std::move(layers));
        return PerceptualExtractor(std::move(layers));
    } catch (const Error& e) {
        throw ParseError(path.string() + ": shape-inconsistent weights: " + e.what());
    }
}

inline Generator load_generator(const std::filesystem::path& path) {
    Model m = load_checkpoint(path);
    if (auto* g = std::get_if<Generator>(&m)) return std::move(*g);
    throw ParseError(path.string() + ": checkpoint holds a feature extractor, not a generator");
}

inline PerceptualExtractor load_extractor(const std::filesystem::path& path) {
    Model m = load_checkpoint(path);
    if (auto* phi = std::get_if<PerceptualExtractor>(&m)) return std::move(*phi);
    throw ParseError(path.string() + ": checkpoint holds a generator, not a feature extractor");
}

/// Architecture table, also shipped as a plain-text sidecar next to each
/// checkpoint.
inline std::string describe(const Generator& g) {
    std::ostringstream out;
    const FeatureShape img = g.output_shape();
    out << "kind generator\n";
    out << "latent_dim " << g.latent_dim() << "\n";
    out << "weighted_layers " << g.weighted_layer_count() << "\n";
    out << "blocks " << g.split_candidates() << "\n";
    out << "output " << img.channels << "x" << img.height << "x" << img.width << "\n";
    for (std::size_t ell = 1; ell <= g.split_candidates(); ++ell) {
        const FeatureShape f = g.feature_shape(static_cast<long>(ell));
        out << "split " << ell << " channels " << f.channels << " height " << f.height
            << " width " << f.width << "\n";
    }
    return out.str();
}

inline std::string describe(const PerceptualExtractor& phi) {
    std::ostringstream out;
    out << "kind extractor\n";
    out << "output_channels " << phi.output_channels() << "\n";
    std::size_t weighted = 0;
    for (const LayerSpec& l : phi.layers()) weighted += l.weighted() ? 1 : 0;
    out << "weighted_layers " << weighted << "\n";
    return out.str();
}

template <typename ModelT>
inline void write_model_sidecar(const ModelT& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ParseError(path.string() + ": cannot open file for writing");
    out << describe(model);
}

}  // namespace mgp
