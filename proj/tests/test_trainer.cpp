#include "common.hpp"
#include "manifest.hpp"
#include "sonar.hpp"
#include "trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace sonarssl;
namespace fs = std::filesystem;

namespace {

PatchDataset synthetic_unlabeled(int n_per_class, std::uint64_t seed) {
    std::vector<PatchTensor> unl;
    for (auto& lp : generate_labeled_patches(n_per_class, seed)) unl.push_back(std::move(lp.patch));
    const std::vector<Split> splits(unl.size(), Split::train);
    return build_dataset(std::move(unl), splits, {}, {}, 0);
}

PatchDataset mixed_dataset() {
    std::vector<PatchTensor> unl;
    for (auto& lp : generate_labeled_patches(3, 4)) unl.push_back(std::move(lp.patch));
    for (int i = 0; i < 6; ++i) {
        PatchTensor p;
        p.pixels = Image(3, 96, 96);
        for (std::size_t k = 0; k < p.pixels.data.size(); ++k) p.pixels.data[k] = static_cast<float>((k * (i + 3)) % 97) / 97.0f;
        p.subset = Subset::real;
        p.source_id = "rgb" + std::to_string(i);
        unl.push_back(std::move(p));
    }
    const std::vector<Split> splits(unl.size(), Split::train);
    return build_dataset(std::move(unl), splits, {}, {}, 0);
}

PretrainConfig smoke_config() {
    PretrainConfig c;
    c.encoder = EncoderSpec::preset(Arch::toy_conv);
    c.batch_size = 6;
    c.views = 2;
    c.epochs = 2;
    c.loss.num_slices = 16;
    c.diagnostic_patches = 6;
    c.data_mode = DataMode::synthetic;
    c.seed = 5;
    return c;
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("sonarssl_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<torch::Tensor> grads(const Encoder& enc) {
    std::vector<torch::Tensor> out;
    for (const auto& p : enc.parameters()) out.push_back(p.grad().clone());
    return out;
}

bool changed(const std::vector<torch::Tensor>& before, const std::vector<torch::Tensor>& after) {
    for (std::size_t k = 0; k < before.size(); ++k)
        if (!torch::equal(before[k], after[k])) return true;
    return false;
}

std::vector<torch::Tensor> snapshot(const std::vector<torch::Tensor>& params) {
    std::vector<torch::Tensor> out;
    for (const auto& p : params) out.push_back(p.detach().clone());
    return out;
}

} // namespace

TEST_SUITE("trainer") {

TEST_CASE("default configuration") {
    const PretrainConfig c;
    const auto j = c.to_json();
    CHECK(j.at("loss").at("lambda") == 0.1);
    CHECK(j.at("proj_dim") == 16);
    CHECK(j.at("views") == 4);
    CHECK(j.at("batch_size") == 1024);
    CHECK(j.at("optimizer").at("name") == "adamw");
    CHECK(j.at("optimizer").at("lr") == 1.4e-3);
    CHECK(j.at("optimizer").at("weight_decay") == 0.05);
    CHECK(j.at("schedule").at("warmup_epochs") == 1);
    CHECK(j.at("schedule").at("decay") == "cosine");
    CHECK(j.at("epochs") == 100);
    CHECK(j.at("augment").at("preset") == "sss_adapted");
    CHECK(PretrainConfig::from_json(j).to_json() == j);
    CHECK(PretrainConfig::from_json(j).hash() == c.hash());
    CHECK_THROWS_AS(PretrainConfig::from_json({{"lamda", 0.2}}), Error);
    CHECK_THROWS_AS(PretrainConfig::from_json({{"batch_size", 1}}), Error);
}

TEST_CASE("learning-rate schedule endpoints") {
    const PretrainConfig c;
    const std::int64_t spe = 7;
    CHECK(lr_at(0, c, spe) == 0.0);
    CHECK(lr_at(spe, c, spe) == doctest::Approx(1.4e-3).epsilon(1e-12));
    CHECK(lr_at(spe / 2, c, spe) < 1.4e-3);
    CHECK(lr_at(100 * spe, c, spe) <= 1e-12);
    double prev = lr_at(spe, c, spe);
    for (std::int64_t s = spe + 1; s <= 100 * spe; ++s) {
        const double v = lr_at(s, c, spe);
        CHECK(v <= prev);
        prev = v;
    }
    CHECK_THROWS_AS(lr_at(100 * spe + 1, c, spe), Error);
    CHECK(steps_per_epoch(2000, 256) == 8);
}

TEST_CASE("embedding diagnostics") {
    RowMatrix z(4, 2);
    z << 1, 0, -1, 0, 1, 0, -1, 0;
    const auto d = embedding_diagnostics(z);
    CHECK(d.dim_var[0] == doctest::Approx(4.0 / 3.0));
    CHECK(d.dim_var[1] == 0.0);
    CHECK(d.effective_rank == doctest::Approx(1.0));
    RowMatrix iso(4, 2);
    iso << 1, 0, -1, 0, 0, 1, 0, -1;
    CHECK(embedding_diagnostics(iso).effective_rank == doctest::Approx(2.0));
}

TEST_CASE("micro-batching reproduces full-batch gradients") {
    const auto data = synthetic_unlabeled(2, 1);
    auto cfg = smoke_config();
    std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
    const auto batch = assemble_batch(data, idx, cfg.augment, cfg.seed, 0);
    Encoder a(cfg.effective_encoder(), 3), b(cfg.effective_encoder(), 3);
    const auto la = compute_step_gradients(a, batch, cfg, 0);
    cfg.micro_batch = 2;
    const auto lb = compute_step_gradients(b, batch, cfg, 0);
    CHECK(la.total == doctest::Approx(lb.total).epsilon(1e-6));
    const auto ga = grads(a), gb = grads(b);
    for (std::size_t k = 0; k < ga.size(); ++k) {
        const double scale = ga[k].abs().max().item<double>();
        const double diff = (ga[k] - gb[k]).abs().max().item<double>();
        CHECK(diff <= 1e-5 * std::max(scale, 1e-3));
    }
}

TEST_CASE("one optimizer step moves backbone and projector") {
    const auto data = synthetic_unlabeled(2, 2);
    auto cfg = smoke_config();
    cfg.epochs = 1;
    const Encoder init(cfg.effective_encoder(), cfg.seed);
    const auto res = pretrain(data, cfg);
    CHECK(res.record.total_steps == 1);
    CHECK(changed(snapshot(init.backbone_parameters()), snapshot(res.encoder.backbone_parameters())));
    CHECK(changed(snapshot(init.projector_parameters()), snapshot(res.encoder.projector_parameters())));
}

TEST_CASE("each patch is normalized with its own subset statistics") {
    const auto data = mixed_dataset();
    auto cfg = smoke_config();
    cfg.data_mode = DataMode::real_plus_syn;
    cfg.epochs = 1;
    std::set<Subset> seen;
    PretrainHooks hooks;
    hooks.on_batch = [&](const BatchProvenance& p) {
        for (std::size_t k = 0; k < p.indices.size(); ++k) {
            CHECK(p.subsets[k] == data.manifest.entries[p.indices[k]].subset);
            CHECK(p.stats[k] == &data.manifest.normalization.at(p.subsets[k]));
            seen.insert(p.subsets[k]);
        }
    };
    pretrain(data, cfg, {}, hooks);
    CHECK(seen.size() == 2);
    CHECK(pretrain_pool(data, DataMode::real).size() == 6);
    CHECK(pretrain_pool(data, DataMode::synthetic).size() == 9);
    CHECK(pretrain_pool(data, DataMode::real_plus_syn).size() == 15);
    cfg.data_mode = DataMode::real;
    cfg.batch_size = 7;
    CHECK_THROWS_AS(pretrain(data, cfg), Error);
}

TEST_CASE("identical configs give identical trajectories") {
    const auto data = synthetic_unlabeled(4, 3);
    const auto cfg = smoke_config();
    const auto a = pretrain(data, cfg), b = pretrain(data, cfg);
    REQUIRE(a.record.steps.size() == b.record.steps.size());
    REQUIRE(a.record.steps.size() == 4);
    for (std::size_t k = 0; k < a.record.steps.size(); ++k) CHECK(a.record.steps[k].total == b.record.steps[k].total);
    auto other = cfg;
    other.seed = 6;
    CHECK(pretrain(data, other).record.steps[0].total != a.record.steps[0].total);
}

TEST_CASE("run directory contents") {
    const auto dir = scratch("run");
    const auto data = synthetic_unlabeled(2, 4);
    const auto cfg = smoke_config();
    const auto res = pretrain(data, cfg, dir);
    for (const auto& f : {"config.json", "metrics.ndjson", "run.json", "final.mjck", "best.mjck",
                          "checkpoints/epoch_0001.mjck", "checkpoints/epoch_0002.mjck"}) {
        CHECK_MESSAGE(fs::exists(dir / f), f);
    }
    const auto rec = RunRecord::load(dir);
    CHECK(rec.config_hash == cfg.hash());
    CHECK(rec.epochs.size() == 2);
    CHECK(rec.steps.size() == res.record.steps.size());
    for (const auto& name : {"final.mjck", "checkpoints/epoch_0001.mjck"}) {
        const auto ck = read_checkpoint(dir / name);
        CHECK(ck.metadata.at("config_hash") == cfg.hash());
        CHECK(ck.metadata.at("format") == "sonarssl-checkpoint");
    }
    std::ifstream in(dir / "metrics.ndjson");
    int lines = 0;
    for (std::string line; std::getline(in, line);) ++lines;
    CHECK(lines == static_cast<int>(rec.steps.size() + rec.epochs.size()));
    const Encoder back = load_encoder(dir / "final.mjck");
    const auto p0 = back.parameters(), p1 = res.encoder.parameters();
    for (std::size_t k = 0; k < p0.size(); ++k) CHECK(torch::equal(p0[k], p1[k]));
}

TEST_CASE("non-finite input aborts with a diagnostic") {
    auto data = synthetic_unlabeled(2, 5);
    data.pixels[2].data[100] = NAN;
    try {
        pretrain(data, smoke_config());
        FAIL("expected a non-finite error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::non_finite);
        CHECK(std::string(e.what()).find("step") != std::string::npos);
    }
}

}
