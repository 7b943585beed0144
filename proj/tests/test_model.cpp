#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mgp/checkpoint.hpp"
#include "mgp/gradcheck.hpp"
#include "mgp/model.hpp"
#include "mgp/tensor_file.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using mgp::Tensor;

namespace {

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "mgp_model_test";
    fs::create_directories(dir);
    return dir;
}

const fs::path kAssetDir = MGP_ASSET_DIR;

}  // namespace

TEST_CASE("toy generator output stays inside the tanh range") {
    mgp::Generator g = mgp::make_toy_generator(3, 4, 16, 32);
    mgp::Rng rng(99);
    for (int i = 0; i < 100; ++i) {
        Tensor z = Tensor::randn({1, 16, 1, 1}, rng);
        Tensor img = g.forward(z);
        REQUIRE(img.shape() == mgp::Shape{1, 3, 8, 8});
        for (double v : img.values()) {
            REQUIRE(v >= -1.0);
            REQUIRE(v <= 1.0);
        }
    }
}

TEST_CASE("split composition equals forward bit-exactly at every layer") {
    mgp::Generator g = mgp::make_toy_generator(5, 8, 24, 32);
    REQUIRE(g.split_candidates() == 8);
    mgp::Rng rng(31);
    for (long ell = 1; ell <= 8; ++ell) {
        auto [g1, g2] = g.split(ell);
        for (int i = 0; i < 50; ++i) {
            Tensor z = Tensor::randn({1, 24, 1, 1}, rng);
            REQUIRE(oracle::bit_equal(g2.apply(g1.apply(z)), g.forward(z)));
        }
    }
}

TEST_CASE("split boundaries") {
    mgp::Generator g = mgp::make_toy_generator(7, 4, 8, 32);
    SECTION("ell = 1 is exactly the first block") {
        auto [g1, g2] = g.split(1);
        REQUIRE(g1.layers.size() == 2);
        REQUIRE(g1.layers[0].kind == mgp::LayerKind::conv_transpose);
        REQUIRE(g1.layers[1].kind == mgp::LayerKind::leaky_relu);
        Tensor z = Tensor::zeros({1, 8, 1, 1});
        REQUIRE(g1.apply(z).extent(1) == g.layer_channel_counts()[0]);
    }
    SECTION("out-of-range ell is a contract error naming the valid range") {
        REQUIRE_THROWS_MATCHES(g.split(0), mgp::ContractError,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring("[1,4]")));
        REQUIRE_THROWS_AS(g.split(5), mgp::ContractError);
    }
    SECTION("latent dimension mismatch is a shape error") {
        REQUIRE_THROWS_AS(g.forward(Tensor::zeros({1, 9, 1, 1})), mgp::ShapeError);
    }
}

TEST_CASE("extractor is deterministic and differentiable") {
    mgp::PerceptualExtractor phi = mgp::make_toy_extractor(11, 4);
    mgp::Rng rng(55);
    Tensor x = Tensor::randn({1, 3, 8, 8}, rng);
    Tensor y = Tensor::randn({1, 3, 8, 8}, rng);

    Tensor f1 = phi.extract(x);
    Tensor f2 = phi.extract(x);
    REQUIRE(oracle::bit_equal(f1, f2));
    REQUIRE(mgp::l1_dist(f1, f2).item() == 0.0);

    const double err = mgp::grad_check(
        [&](const Tensor& t) { return mgp::l1_dist(phi.extract(t), phi.extract(y)); }, x, 1e-5);
    REQUIRE(err < 1e-6);

    REQUIRE_THROWS_AS(phi.extract(Tensor::zeros({1, 1, 8, 8})), mgp::ShapeError);
}

TEST_CASE("model parameters never accumulate gradients") {
    mgp::Generator g = mgp::make_toy_generator(2, 4, 8, 32);
    mgp::Tape::active().reset();
    Tensor z = Tensor::zeros({1, 8, 1, 1});
    z.set_requires_grad(true);
    mgp::backward(mgp::l2_norm_sq(g.forward(z)));
    REQUIRE(z.has_grad());
    for (const mgp::LayerSpec& l : g.layers()) {
        if (!l.weighted()) continue;
        REQUIRE_FALSE(l.weight.has_grad());
        REQUIRE_FALSE(l.bias.has_grad());
    }
    mgp::Tape::active().reset();
}

TEST_CASE("checkpoint round-trip is byte-identical") {
    const fs::path dir = temp_dir();
    mgp::Generator g = mgp::make_toy_generator(13, 4, 8, 32);
    const fs::path a = dir / "a.mgc";
    const fs::path b = dir / "b.mgc";
    mgp::save_checkpoint(g, a);
    mgp::Generator loaded = mgp::load_generator(a);
    mgp::save_checkpoint(loaded, b);
    REQUIRE(file_bytes(a) == file_bytes(b));
}

TEST_CASE("checkpoint corruption surfaces distinct parse errors") {
    const fs::path dir = temp_dir();
    const fs::path path = dir / "c.mgc";
    mgp::save_checkpoint(mgp::make_toy_extractor(2, 4), path);

    SECTION("truncation by one byte") {
        std::string bytes = file_bytes(path);
        bytes.pop_back();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << bytes;
        out.close();
        REQUIRE_THROWS_MATCHES(mgp::load_checkpoint(path), mgp::ParseError,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring("truncated")));
    }
    SECTION("bad magic") {
        std::string bytes = file_bytes(path);
        bytes[0] = 'X';
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << bytes;
        out.close();
        REQUIRE_THROWS_MATCHES(mgp::load_checkpoint(path), mgp::ParseError,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring("magic")));
    }
    SECTION("wrong model kind") {
        REQUIRE_THROWS_AS(mgp::load_generator(path), mgp::ParseError);
    }
}

TEST_CASE("toy construction is seed-deterministic") {
    const fs::path dir = temp_dir();
    const fs::path a = dir / "s1.mgc";
    const fs::path b = dir / "s2.mgc";
    mgp::save_checkpoint(mgp::make_toy_generator(21, 4, 8, 32), a);
    mgp::save_checkpoint(mgp::make_toy_generator(21, 4, 8, 32), b);
    REQUIRE(file_bytes(a) == file_bytes(b));

    mgp::Generator g1 = mgp::make_toy_generator(1, 4, 8, 32);
    mgp::Generator g2 = mgp::make_toy_generator(2, 4, 8, 32);
    REQUIRE_FALSE(oracle::bit_equal(g1.layers()[0].weight, g2.layers()[0].weight));
}

TEST_CASE("shipped toy checkpoints match their generation seeds") {
    // Pinned at first build, regression-checked afterwards.
    fs::create_directories(kAssetDir);
    const fs::path gen_path = kAssetDir / "toy_gen_seed7.mgc";
    const fs::path phi_path = kAssetDir / "toy_phi_seed11.mgc";

    mgp::Generator g = mgp::make_toy_generator(7, 8, 64);
    mgp::PerceptualExtractor phi = mgp::make_toy_extractor(11);
    if (!fs::exists(gen_path)) {
        mgp::save_checkpoint(g, gen_path);
        mgp::write_model_sidecar(g, kAssetDir / "toy_gen_seed7.txt");
    }
    if (!fs::exists(phi_path)) {
        mgp::save_checkpoint(phi, phi_path);
        mgp::write_model_sidecar(phi, kAssetDir / "toy_phi_seed11.txt");
    }

    const fs::path dir = temp_dir();
    mgp::save_checkpoint(g, dir / "regen_gen.mgc");
    mgp::save_checkpoint(phi, dir / "regen_phi.mgc");
    REQUIRE(file_bytes(dir / "regen_gen.mgc") == file_bytes(gen_path));
    REQUIRE(file_bytes(dir / "regen_phi.mgc") == file_bytes(phi_path));

    mgp::Generator loaded = mgp::load_generator(gen_path);
    REQUIRE(loaded.latent_dim() == 64);
    REQUIRE(loaded.split_candidates() == 8);
    REQUIRE(loaded.layer_channel_counts() ==
            std::vector<std::size_t>{256, 256, 128, 128, 64, 64, 32, 32});
    const mgp::FeatureShape out = loaded.output_shape();
    REQUIRE(out.channels == 3);
    REQUIRE(out.height == 32);
    REQUIRE(out.width == 32);
}

TEST_CASE("golden forward output is pinned and stable") {
    fs::create_directories(kAssetDir / "golden");
    const fs::path golden = kAssetDir / "golden" / "toy_gen_seed7_z0.mtd";
    mgp::Generator g = mgp::make_toy_generator(7, 8, 64);
    Tensor img = g.forward(Tensor::zeros({1, 64, 1, 1}));
    if (!fs::exists(golden)) {
        mgp::write_mtd(img, golden);
    }
    Tensor pinned = mgp::read_mtd(golden);
    REQUIRE(oracle::bit_equal(img, pinned));
}

TEST_CASE("sidecar table matches the split feature shapes") {
    const fs::path gen_path = kAssetDir / "toy_gen_seed7.mgc";
    const fs::path sidecar = kAssetDir / "toy_gen_seed7.txt";
    REQUIRE(fs::exists(sidecar));
    mgp::Generator g = mgp::load_generator(gen_path);

    std::ifstream in(sidecar);
    std::string line;
    std::size_t checked = 0;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag != "split") continue;
        long ell;
        std::string key;
        std::size_t channels, height, width;
        ls >> ell >> key >> channels >> key >> height >> key >> width;
        const mgp::FeatureShape f = g.feature_shape(ell);
        REQUIRE(f.channels == channels);
        REQUIRE(f.height == height);
        REQUIRE(f.width == width);

        auto [g1, g2] = g.split(ell);
        Tensor feat = g1.apply(Tensor::zeros({1, 64, 1, 1}));
        REQUIRE(feat.shape() == mgp::Shape{1, channels, height, width});
        ++checked;
    }
    REQUIRE(checked == 8);
}
