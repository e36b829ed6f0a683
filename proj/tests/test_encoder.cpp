#include "common.hpp"
#include "encoder.hpp"
#include "objectives.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace sonarssl;
namespace fs = std::filesystem;

namespace {

bool same_parameters(const Encoder& a, const Encoder& b, const std::string& prefix = "") {
    const auto pa = a.named_parameters(), pb = b.named_parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t k = 0; k < pa.size(); ++k) {
        if (!pa[k].first.starts_with(prefix)) continue;
        if (pa[k].first != pb[k].first || !torch::equal(pa[k].second, pb[k].second)) return false;
    }
    return true;
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("sonarssl_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_SUITE("encoder") {

TEST_CASE("parameter counts match the reference sizes") {
    const Encoder tiny(EncoderSpec::preset(Arch::vit_tiny), 0);
    const Encoder small(EncoderSpec::preset(Arch::vit_small), 0);
    MESSAGE("vit_tiny backbone " << tiny.backbone_param_count() << ", vit_small backbone " << small.backbone_param_count());
    CHECK(std::abs(tiny.backbone_param_count() / 5.5e6 - 1.0) <= 0.05);
    CHECK(std::abs(small.backbone_param_count() / 21.6e6 - 1.0) <= 0.05);
    CHECK(tiny.proj_dim() == 16);
    CHECK(tiny.feature_dim() == 192);
    CHECK(small.feature_dim() == 384);
}

TEST_CASE("same spec and seed give identical parameters") {
    const auto spec = EncoderSpec::preset(Arch::toy_conv);
    const Encoder a(spec, 3), b(spec, 3), c(spec, 4);
    CHECK(same_parameters(a, b));
    CHECK_FALSE(same_parameters(a, c));
    const Encoder copy = a.clone();
    CHECK(same_parameters(a, copy));
}

TEST_CASE("token counts and spec validation") {
    auto spec = EncoderSpec::preset(Arch::vit_tiny);
    CHECK(spec.num_tokens() == 36);
    spec.pooling = Pooling::class_token;
    CHECK(spec.num_tokens() == 37);
    spec.patch_size = 14;
    CHECK_THROWS_AS(spec.validate(), Error);
    auto ext = EncoderSpec::preset(Arch::vit_tiny);
    ext.init_mode = InitMode::external_checkpoint;
    CHECK_THROWS_AS(ext.validate(), Error);
    auto j = EncoderSpec::preset(Arch::vit_small);
    j.set_proj_dim(32);
    CHECK(EncoderSpec::from_json(j.to_json()).to_json() == j.to_json());
    CHECK(EncoderSpec::from_json(j.to_json()).hash() == j.hash());
}

TEST_CASE("encode shape contract") {
    for (Arch arch : {Arch::toy_conv, Arch::vit_tiny}) {
        auto spec = EncoderSpec::preset(arch);
        if (arch == Arch::vit_tiny) spec.depth = 2;
        Encoder enc(spec, 1);
        enc.train(false);
        const std::vector<Image> one{Image(3, 96, 96)};
        const auto e = enc.encode(one);
        CHECK(e.h.sizes() == torch::IntArrayRef{1, enc.feature_dim()});
        CHECK(e.z.sizes() == torch::IntArrayRef{1, 16});
        CHECK(torch::isfinite(e.h).all().item<bool>());
        CHECK(torch::isfinite(e.z).all().item<bool>());
    }
    Encoder toy(EncoderSpec::preset(Arch::toy_conv), 2);
    toy.train(false);
    std::vector<Image> eight;
    for (int i = 0; i < 8; ++i) eight.push_back(Image(3, 96, 96, 0.1f * static_cast<float>(i)));
    CHECK(toy.encode(eight).h.sizes() == torch::IntArrayRef{8, 128});
    CHECK_THROWS_AS(toy.forward(torch::zeros({2, 3, 64, 64})), Error);
    CHECK_THROWS_AS(toy.forward(torch::zeros({2, 1, 96, 96})), Error);
    CHECK_THROWS_AS(toy.encode(std::vector<Image>{Image(1, 96, 96)}), Error);
}

TEST_CASE("evaluation is deterministic and per-sample") {
    auto spec = EncoderSpec::preset(Arch::vit_tiny);
    spec.depth = 2;
    Encoder enc(spec, 5);
    enc.train(false);
    torch::manual_seed(0);
    const auto x = torch::randn({6, 3, 96, 96});
    torch::NoGradGuard guard;
    const auto a = enc.forward(x), b = enc.forward(x);
    CHECK(torch::equal(a.z, b.z));
    const auto perm = torch::tensor(std::vector<std::int64_t>{3, 0, 5, 1, 4, 2});
    const auto p = enc.forward(x.index_select(0, perm));
    CHECK(torch::allclose(p.z, a.z.index_select(0, perm), 1e-5, 1e-5));
    CHECK(torch::allclose(p.h, a.h.index_select(0, perm), 1e-5, 1e-5));
}

TEST_CASE("a combined-loss step reaches every parameter") {
    for (Arch arch : {Arch::toy_conv, Arch::vit_tiny}) {
        auto spec = EncoderSpec::preset(arch);
        if (arch == Arch::vit_tiny) spec.depth = 2;
        Encoder enc(spec, 7);
        enc.train(true);
        torch::manual_seed(1);
        const std::size_t n = 4, v = 2;
        const auto z = enc.forward(torch::randn({static_cast<long>(n * v), 3, 96, 96})).z;
        const auto zd = z.detach().to(torch::kFloat64).contiguous();
        RowMatrix zm(zd.size(0), zd.size(1));
        std::copy(zd.data_ptr<double>(), zd.data_ptr<double>() + zd.numel(), zm.data());
        RowMatrix grad;
        combined_loss(ViewBatch(n, v, zm), SliceSet::sample(16, 32, 1), LossConfig{}, &grad);
        const auto g = torch::from_blob(grad.data(), {grad.rows(), grad.cols()}, torch::kFloat64).to(torch::kFloat32);
        z.backward(g);
        for (const auto& [name, p] : enc.named_parameters()) {
            INFO(name);
            REQUIRE(p.grad().defined());
            CHECK(p.grad().norm().item<double>() > 0.0);
        }
    }
}

TEST_CASE("checkpoint round trip and external initialization") {
    const auto dir = scratch("encoder");
    auto spec = EncoderSpec::preset(Arch::vit_tiny);
    spec.depth = 2;
    Encoder src(spec, 11);
    write_checkpoint(dir / "a.mjck", make_checkpoint(src, {{"note", "test"}}));
    const auto ck = read_checkpoint(dir / "a.mjck");
    CHECK(ck.metadata.at("note") == "test");
    const Encoder back = load_encoder(dir / "a.mjck");
    CHECK(same_parameters(src, back));

    auto ext = spec;
    ext.init_mode = InitMode::external_checkpoint;
    ext.checkpoint_path = (dir / "a.mjck").string();
    const Encoder warm(ext, 99);
    const Encoder fresh(spec, 99);
    CHECK(same_parameters(src, warm, "backbone."));
    CHECK_FALSE(same_parameters(src, warm, "projector."));
    CHECK(same_parameters(fresh, warm, "projector."));
    CHECK(warm.init_report().missing.empty());
    CHECK_FALSE(warm.init_report().loaded.empty());

    auto wide = spec;
    wide.embed_dim = 96;
    wide.projector_widths = {96, 16};
    wide.init_mode = InitMode::external_checkpoint;
    wide.checkpoint_path = ext.checkpoint_path;
    try {
        Encoder bad(wide, 0);
        FAIL("expected a shape mismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::shape_mismatch);
        const std::string msg = e.what();
        CHECK(msg.find("pos_embed") != std::string::npos);
        CHECK(msg.find("patch_embed") != std::string::npos);
    }
}

}
