#include "common.hpp"
#include "manifest.hpp"
#include "probe.hpp"
#include "sonar.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace sonarssl;

namespace {

FeatureSet gaussian_blobs(int per_class, int dim, double spread, std::uint64_t seed, bool shuffle_labels = false) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g(0.0f, 1.0f);
    FeatureSet f;
    std::vector<float> buf;
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < per_class; ++i) {
            for (int d = 0; d < dim; ++d) buf.push_back(g(rng) + (d == c ? static_cast<float>(spread) : 0.0f));
            f.y.push_back(c);
        }
    }
    if (shuffle_labels) std::shuffle(f.y.begin(), f.y.end(), rng);
    f.x = torch::from_blob(buf.data(), {3 * per_class, dim}, torch::kFloat32).clone();
    return f;
}

double mean_f1(const std::vector<SeedMetrics>& seeds) {
    double m = 0;
    for (const auto& s : seeds) m += s.macro_f1 / static_cast<double>(seeds.size());
    return m;
}

PatchDataset labeled_dataset(int per_class, std::uint64_t seed) {
    auto lp = generate_labeled_patches(per_class, seed);
    std::vector<std::string> strata;
    for (const auto& p : lp) strata.emplace_back(to_string(p.label));
    SplitSpec spec;
    spec.stratify_by = StratifyBy::class_label;
    spec.seed = seed;
    const auto splits = make_splits(strata, spec);
    return build_dataset({}, {}, std::move(lp), splits, seed);
}

std::vector<torch::Tensor> snapshot(const Encoder& e) {
    std::vector<torch::Tensor> out;
    for (const auto& p : e.parameters()) out.push_back(p.detach().clone());
    return out;
}

bool identical(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
    for (std::size_t k = 0; k < a.size(); ++k)
        if (!torch::equal(a[k], b[k])) return false;
    return a.size() == b.size();
}

} // namespace

TEST_SUITE("probe") {

TEST_CASE("macro-F1 worked examples") {
    const auto half = ConfusionMatrix::from_rows({{5, 5}, {5, 5}});
    CHECK(macro_f1(half) == 0.5);
    CHECK(accuracy(half) == 0.5);
    const auto perfect = ConfusionMatrix::from_rows({{3, 0, 0}, {0, 4, 0}, {0, 0, 5}});
    CHECK(macro_f1(perfect) == 1.0);
    // Class 2 is never predicted.
    const auto never = ConfusionMatrix::from_rows({{4, 0, 0}, {0, 4, 0}, {2, 2, 0}});
    const auto f1 = per_class_f1(never);
    CHECK(f1[2] == 0.0);
    CHECK(f1[0] == doctest::Approx(0.8));
    CHECK(macro_f1(never) == doctest::Approx((0.8 + 0.8 + 0.0) / 3.0));
    CHECK(per_class_recall(never)[1] == 1.0);
    CHECK_THROWS_AS(macro_f1(ConfusionMatrix(3)), Error);
    CHECK_THROWS_AS(ConfusionMatrix::from_rows({{1, 2}, {3}}), Error);

    const std::vector<int> truth{0, 1, 2, 2, 1, 0}, pred{0, 2, 2, 1, 1, 0};
    const auto cm = ConfusionMatrix::from_predictions(truth, pred, 3);
    CHECK(cm.at(1, 2) == 1);
    CHECK(cm.at(2, 1) == 1);
    CHECK(cm.total() == 6);
    CHECK(cm.row_sum(2) == 2);
}

TEST_CASE("binary merge sums BG and NOMBO") {
    const auto three = ConfusionMatrix::from_rows({{10, 2, 3}, {1, 8, 1}, {4, 0, 6}});
    const auto bin = merge_binary(three);
    CHECK(bin == ConfusionMatrix::from_rows({{10 + 3 + 4 + 6, 2 + 0}, {1 + 1, 8}}));
    CHECK(task_label(Label::bg, Task::binary) == 0);
    CHECK(task_label(Label::nombo, Task::binary) == 0);
    CHECK(task_label(Label::milco, Task::binary) == 1);
    CHECK(task_label(Label::nombo, Task::three_class) == 2);
    CHECK(class_names(Task::binary).size() == 2);
    CHECK(num_classes(Task::three_class) == 3);
}

TEST_CASE("seed aggregation") {
    const auto agg = aggregate_seeds({{{"macro_f1", 0.8}}, {{"macro_f1", 0.9}}});
    CHECK(std::abs(agg.at("macro_f1").mean - 0.85) <= 1e-4);
    CHECK(std::abs(agg.at("macro_f1").std - 0.0707) <= 1e-4);
    const auto same = aggregate_seeds({{{"a", 0.3}}, {{"a", 0.3}}, {{"a", 0.3}}});
    CHECK(same.at("a").std == 0.0);
    std::vector<std::map<std::string, double>> recs{{{"a", 0.1}}, {{"a", 0.7}}, {{"a", 0.33}}, {{"a", 0.9}}};
    const auto fwd = aggregate_seeds(recs);
    std::reverse(recs.begin(), recs.end());
    const auto rev = aggregate_seeds(recs);
    CHECK(fwd.at("a").mean == rev.at("a").mean);
    CHECK(fwd.at("a").std == rev.at("a").std);
    CHECK_THROWS_AS(aggregate_seeds({{{"a", 0.1}}}), Error);
    CHECK_THROWS_AS(aggregate_seeds({{{"a", 0.1}}, {{"b", 0.1}}}), Error);
}

TEST_CASE("probe config validation") {
    ProbeConfig c;
    CHECK(c.seeds.size() == 10);
    CHECK(c.hidden == 512);
    CHECK(ProbeConfig::from_json(c.to_json()).to_json() == c.to_json());
    c.seeds = {1};
    CHECK_THROWS_AS(c.validate(), Error);
    c.seeds = {1, 1};
    CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("separable Gaussian features reach near-perfect macro-F1") {
    ProbeConfig cfg;
    cfg.seeds = {0, 1, 2};
    const auto res = run_feature_probe(gaussian_blobs(200, 8, 8.0, 1), gaussian_blobs(50, 8, 8.0, 2),
                                       gaussian_blobs(100, 8, 8.0, 3), 3, cfg);
    MESSAGE("separable macro-F1 " << mean_f1(res));
    CHECK(mean_f1(res) >= 0.99);
    for (const auto& s : res) {
        CHECK(s.confusion.row_sum(0) == 100);
        CHECK(s.val_after_restore == s.val_macro_f1);
        REQUIRE_FALSE(s.val_history.empty());
        CHECK(s.val_macro_f1 == *std::max_element(s.val_history.begin(), s.val_history.end()));
        CHECK(s.val_history[static_cast<std::size_t>(s.best_epoch - 1)] == s.val_macro_f1);
    }
}

TEST_CASE("shuffled labels fall to chance") {
    ProbeConfig cfg;
    cfg.seeds = {0, 1, 2};
    const auto res = run_feature_probe(gaussian_blobs(200, 8, 8.0, 4, true), gaussian_blobs(50, 8, 8.0, 5, true),
                                       gaussian_blobs(200, 8, 8.0, 6, true), 3, cfg);
    MESSAGE("shuffled macro-F1 " << mean_f1(res));
    CHECK(std::abs(mean_f1(res) - 1.0 / 3.0) <= 0.1);
}

TEST_CASE("feature probe errors") {
    ProbeConfig cfg;
    cfg.seeds = {0, 1};
    auto train = gaussian_blobs(10, 4, 3.0, 1);
    for (int& y : train.y) y = std::min(y, 1);
    CHECK_THROWS_AS(run_feature_probe(train, gaussian_blobs(5, 4, 3.0, 2), gaussian_blobs(5, 4, 3.0, 3), 3, cfg), Error);
}

TEST_CASE("frozen probe leaves the backbone untouched") {
    const auto data = labeled_dataset(10, 3);
    const Encoder enc(EncoderSpec::preset(Arch::toy_conv), 1);
    const auto before = snapshot(enc);
    ProbeConfig cfg;
    cfg.seeds = {0, 1};
    cfg.max_epochs = 5;
    const auto res = run_probe(enc, data, cfg, describe_initial(enc));
    CHECK(identical(before, snapshot(enc)));
    REQUIRE(res.seeds.size() == 2);
    for (const auto& s : res.seeds) {
        for (int c = 0; c < 3; ++c) CHECK(s.confusion.row_sum(c) == 1);
    }
    CHECK(res.representation.at("init") == "random");
    CHECK(res.config_hash == ProbeResult::compute_hash(res.config, res.representation));
    CHECK(res.aggregate.contains("recall/MILCO"));

    const auto back = ProbeResult::from_json(res.to_json());
    CHECK(back.to_json() == res.to_json());
    CHECK(back.config_hash == res.config_hash);

    cfg.task = Task::binary;
    const auto bin = run_probe(enc, data, cfg);
    CHECK(bin.seeds[0].confusion.k == 2);
    CHECK(bin.seeds[0].confusion.row_sum(0) == 2);
    CHECK(bin.seeds[0].confusion.row_sum(1) == 1);
}

TEST_CASE("fine-tuning trains a private copy") {
    const auto data = labeled_dataset(10, 4);
    const Encoder enc(EncoderSpec::preset(Arch::toy_conv), 2);
    const auto before = snapshot(enc);
    ProbeConfig cfg;
    cfg.mode = ProbeMode::finetune_mlp;
    cfg.seeds = {0, 1};
    cfg.max_epochs = 2;
    cfg.hidden = 32;
    const auto res = run_probe(enc, data, cfg);
    CHECK(identical(before, snapshot(enc)));
    CHECK(res.seeds.size() == 2);
    for (const auto& s : res.seeds) CHECK(s.val_after_restore == s.val_macro_f1);
}

TEST_CASE("missing class in the train split is rejected") {
    auto lp = generate_labeled_patches(4, 9);
    std::vector<Split> splits;
    for (const auto& p : lp) splits.push_back(p.label == Label::nombo ? Split::test : Split::train);
    splits[0] = Split::val;
    const auto data = build_dataset({}, {}, std::move(lp), splits, 0);
    const Encoder enc(EncoderSpec::preset(Arch::toy_conv), 0);
    ProbeConfig cfg;
    cfg.seeds = {0, 1};
    cfg.max_epochs = 1;
    try {
        run_probe(enc, data, cfg);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("absent from the train split") != std::string::npos);
    }
}

}
