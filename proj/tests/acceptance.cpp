// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
// Usage: acceptance [criterion ...]   (default: all)

#include "common.hpp"
#include "manifest.hpp"
#include "objectives.hpp"
#include "oracles.hpp"
#include "patches.hpp"
#include "probe.hpp"
#include "sonar.hpp"
#include "trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace sonarssl;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void expect(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

RowMatrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double mean = 0.0, double sd = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(mean, sd);
    RowMatrix m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = g(rng);
    return m;
}

std::vector<double> flat(const RowMatrix& m) { return {m.data(), m.data() + m.size()}; }

RowMatrix unflat(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols) {
    return Eigen::Map<const RowMatrix>(v.data(), rows, cols);
}

std::vector<double> concat(const RowMatrix& a, const RowMatrix& b) {
    auto v = flat(a);
    const auto w = flat(b);
    v.insert(v.end(), w.begin(), w.end());
    return v;
}

// 1. Statistic oracle equivalence.
void criterion_1(Outcome& o) {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> size(2, 512);
    std::uniform_real_distribution<double> loc(-1.5, 1.5), scale(0.3, 2.5);
    double worst_qd = 0, worst_cf = 0, worst_qd_brute = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::normal_distribution<double> g(loc(rng), scale(rng));
        std::vector<double> y(static_cast<std::size_t>(size(rng)));
        for (double& v : y) v = g(rng);
        const double cf = epps_pulley_1d(y, StatisticMode::closed_form);
        const double qd = epps_pulley_1d(y, StatisticMode::quadrature);
        const double brute = oracle::epps_pulley_integral(y, 12.0, 3000);
        worst_qd = std::max(worst_qd, std::abs(qd - cf) / cf);
        worst_cf = std::max(worst_cf, std::abs(cf - brute) / brute);
        worst_qd_brute = std::max(worst_qd_brute, std::abs(qd - brute) / brute);
    }
    o.detail << "max rel err quadrature/closed " << worst_qd << ", closed/integral " << worst_cf
             << ", quadrature/integral " << worst_qd_brute;
    o.expect(worst_qd <= 1e-3, "quadrature vs closed form");
    o.expect(worst_cf <= 1e-3, "closed form vs integral");
    o.expect(worst_qd_brute <= 1e-3, "quadrature vs integral");
}

// 2. Analytic anchors.
void criterion_2(Outcome& o) {
    const double zero = epps_pulley_1d(std::vector<double>(64, 0.0), StatisticMode::closed_form);
    const double far = epps_pulley_1d(std::vector<double>(64, 100.0), StatisticMode::closed_form);
    const double want_zero = 1.0 - std::sqrt(2.0) + 1.0 / std::sqrt(3.0);
    const double want_far = 1.0 + 1.0 / std::sqrt(3.0);
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> draws(10000);
    for (double& v : draws) v = g(rng);
    const double normal = epps_pulley_1d(draws, StatisticMode::closed_form);
    for (double& v : draws) v += 3.0;
    const double shifted = epps_pulley_1d(draws, StatisticMode::closed_form);
    o.detail << "zero " << zero << ", c=100 " << far << ", N(0,1) " << normal << ", shifted/normal "
             << shifted / normal;
    o.expect(std::abs(zero - want_zero) <= 1e-6, "point mass at 0");
    o.expect(std::abs(far - want_far) <= 1e-6, "point mass at 100");
    o.expect(normal <= 0.01, "N(0,1) draws");
    o.expect(shifted >= 50.0 * normal, "shifted draws");
}

// 3. Finite-difference gradient checks.
void criterion_3(Outcome& o) {
    double worst_combined = 0, worst_vicreg = 0, worst_simclr = 0;
    for (std::uint64_t s = 0; s < 4; ++s) {
        const std::size_t n = 4 + 2 * s, views = 2;
        const Eigen::Index d = 3 + static_cast<Eigen::Index>(s);
        const RowMatrix z = gaussian(static_cast<Eigen::Index>(n * views), d, 300 + s, 0.3, 0.8);
        const auto slices = SliceSet::sample(static_cast<std::size_t>(d), 16, 400 + s);
        for (auto mode : {StatisticMode::closed_form, StatisticMode::quadrature}) {
            LossConfig cfg;
            cfg.lambda = 0.4;
            cfg.mode = mode;
            RowMatrix grad;
            combined_loss(ViewBatch(n, views, z), slices, cfg, &grad);
            const auto fd = oracle::central_difference(
                [&](const std::vector<double>& x) {
                    return combined_loss(ViewBatch(n, views, unflat(x, z.rows(), d)), slices, cfg).total;
                },
                flat(z));
            worst_combined = std::max(worst_combined, oracle::max_relative_error(flat(grad), fd));
        }

        const auto rows = static_cast<Eigen::Index>(6 + 2 * s);
        const RowMatrix a = gaussian(rows, d, 500 + s, 0.0, 0.6), b = gaussian(rows, d, 600 + s, 0.1, 0.9);
        RowMatrix ga, gb;
        vicreg_loss(a, b, {}, &ga, &gb);
        auto fd = oracle::central_difference(
            [&](const std::vector<double>& x) {
                const std::vector<double> xa(x.begin(), x.begin() + a.size()), xb(x.begin() + a.size(), x.end());
                return vicreg_loss(unflat(xa, rows, d), unflat(xb, rows, d)).total;
            },
            concat(a, b));
        worst_vicreg = std::max(worst_vicreg, oracle::max_relative_error(concat(ga, gb), fd));

        simclr_loss(a, b, 0.2, &ga, &gb);
        fd = oracle::central_difference(
            [&](const std::vector<double>& x) {
                const std::vector<double> xa(x.begin(), x.begin() + a.size()), xb(x.begin() + a.size(), x.end());
                return simclr_loss(unflat(xa, rows, d), unflat(xb, rows, d), 0.2);
            },
            concat(a, b));
        worst_simclr = std::max(worst_simclr, oracle::max_relative_error(concat(ga, gb), fd));
    }
    o.detail << "max rel err combined " << worst_combined << ", vicreg " << worst_vicreg << ", simclr "
             << worst_simclr;
    o.expect(worst_combined <= 1e-4, "combined");
    o.expect(worst_vicreg <= 1e-4, "vicreg");
    o.expect(worst_simclr <= 1e-4, "simclr");
}

// 4. Invariance loss exactness.
void criterion_4(Outcome& o) {
    RowMatrix same(6, 5);
    const RowMatrix base = gaussian(2, 5, 7);
    for (int i = 0; i < 2; ++i)
        for (int v = 0; v < 3; ++v) same.row(i * 3 + v) = base.row(i);
    const double zero = invariance_loss(ViewBatch(2, 3, same));
    RowMatrix pair(2, 1);
    pair << 0.0, 2.0;
    const double one = invariance_loss(ViewBatch(1, 2, pair));
    double worst = 0;
    const RowMatrix z = gaussian(12, 4, 8);
    const double base_loss = invariance_loss(ViewBatch(4, 3, z));
    for (double alpha : {0.5, 2.0, -3.0, 10.0}) {
        const double scaled = invariance_loss(ViewBatch(4, 3, alpha * z));
        worst = std::max(worst, std::abs(scaled - alpha * alpha * base_loss));
    }
    o.detail << "identical " << zero << ", N=1 V=2 " << one << ", scaling err " << worst;
    o.expect(zero == 0.0, "identical views");
    o.expect(one == 1.0, "hand case");
    o.expect(worst <= 1e-9, "alpha scaling");
}

PatchDataset unlabeled_synthetic(int count, std::uint64_t seed) {
    auto lp = generate_labeled_patches((count + 2) / 3, seed);
    std::vector<PatchTensor> un;
    for (auto& p : lp) un.push_back(std::move(p.patch));
    un.resize(static_cast<std::size_t>(count));
    std::vector<Split> splits(un.size(), Split::train);
    return build_dataset(std::move(un), splits, {}, {}, seed);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

PretrainHooks progress(const std::string& tag) {
    const auto t0 = std::chrono::steady_clock::now();
    PretrainHooks h;
    h.on_epoch = [tag, t0](const EpochRecord& e) {
        std::printf("  %s epoch %d loss %.4f mean_std %.4f mean_var %.4f erank %.2f (%.0fs)\n", tag.c_str(), e.epoch,
                    e.mean_loss, e.diag.mean_std, e.diag.mean_var, e.diag.effective_rank, seconds_since(t0));
        std::fflush(stdout);
    };
    return h;
}

// 5. Collapse diagnostic.
void criterion_5(Outcome& o) {
    const auto data = unlabeled_synthetic(2000, 51);
    PretrainConfig cfg;
    cfg.encoder = EncoderSpec::preset(Arch::toy_conv);
    cfg.data_mode = DataMode::synthetic;
    cfg.batch_size = 256;
    cfg.epochs = 5;
    cfg.seed = 5;
    cfg.loss.lambda = 0.0;
    const auto off = pretrain(data, cfg, {}, progress("lambda=0"));
    cfg.loss.lambda = 0.1;
    const auto on = pretrain(data, cfg, {}, progress("lambda=0.1"));
    const auto& d0 = off.record.epochs.back().diag;
    const auto& d1 = on.record.epochs.back().diag;
    o.detail << "final mean_std lambda=0 " << d0.mean_std << ", lambda=0.1 " << d1.mean_std
             << "; lambda=0.1 mean_var " << d1.mean_var;
    o.expect(d0.mean_std < 0.1 * d1.mean_std, "lambda=0 std below 0.1x lambda=0.1 std");
    o.expect(d1.mean_var >= 0.3 && d1.mean_var <= 3.0, "lambda=0.1 mean_var in [0.3, 3.0]");
}

// 6. End-to-end representation gain.
void criterion_6(Outcome& o) {
    auto lp = generate_labeled_patches(2000, 61);
    std::vector<PatchTensor> un;
    for (auto& p : lp) un.push_back(std::move(p.patch));
    std::vector<Split> un_splits(un.size(), Split::train);
    auto labeled = generate_labeled_patches(500, 62);
    std::vector<std::string> strata;
    for (const auto& p : labeled) strata.emplace_back(to_string(p.label));
    SplitSpec split;
    split.stratify_by = StratifyBy::class_label;
    split.train = 0.6;
    split.val = 0.2;
    split.test = 0.2;
    split.seed = 63;
    const auto labeled_splits = make_splits(strata, split);
    const auto data = build_dataset(std::move(un), un_splits, std::move(labeled), labeled_splits, 64);

    PretrainConfig cfg;
    cfg.encoder = EncoderSpec::preset(Arch::toy_conv);
    cfg.data_mode = DataMode::synthetic;
    cfg.batch_size = 256;
    cfg.epochs = 20;
    cfg.seed = 6;
    ProbeConfig probe;
    probe.seeds = {0, 1, 2};

    const Encoder initial(cfg.effective_encoder(), cfg.seed);
    const auto random = run_probe(initial, data, probe, describe_initial(initial));
    std::printf("  random-init macro-F1 %.4f\n", random.aggregate.at("macro_f1").mean);
    std::fflush(stdout);
    const auto trained = pretrain(data, cfg, {}, progress("sigreg"));
    const auto ssl = run_probe(trained.encoder, data, probe);
    const double gain = 100.0 * (ssl.aggregate.at("macro_f1").mean - random.aggregate.at("macro_f1").mean);
    o.detail << "pretrained " << ssl.aggregate.at("macro_f1").mean << " vs random "
             << random.aggregate.at("macro_f1").mean << " (" << gain << " points)";
    o.expect(gain >= 5.0, "gain of at least 5 macro-F1 points");
}

FeatureSet blobs(int per_class, double spread, std::uint64_t seed, bool shuffle) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g(0.0f, 1.0f);
    std::vector<float> buf;
    FeatureSet f;
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < per_class; ++i) {
            for (int d = 0; d < 16; ++d) buf.push_back(g(rng) + (d == c ? static_cast<float>(spread) : 0.0f));
            f.y.push_back(c);
        }
    }
    if (shuffle) std::shuffle(f.y.begin(), f.y.end(), rng);
    f.x = torch::from_blob(buf.data(), {3 * per_class, 16}, torch::kFloat32).clone();
    return f;
}

double mean_macro_f1(const std::vector<SeedMetrics>& seeds) {
    double m = 0;
    for (const auto& s : seeds) m += s.macro_f1 / static_cast<double>(seeds.size());
    return m;
}

// 7. Probe harness oracles.
void criterion_7(Outcome& o) {
    ProbeConfig cfg;
    cfg.seeds = {0, 1, 2};
    const double separable = mean_macro_f1(
        run_feature_probe(blobs(300, 8.0, 71, false), blobs(60, 8.0, 72, false), blobs(150, 8.0, 73, false), 3, cfg));
    const double shuffled = mean_macro_f1(
        run_feature_probe(blobs(300, 8.0, 74, true), blobs(60, 8.0, 75, true), blobs(300, 8.0, 76, true), 3, cfg));
    o.detail << "separable " << separable << ", shuffled " << shuffled << " (chance 0.333)";
    o.expect(separable >= 0.99, "separable");
    o.expect(std::abs(shuffled - 1.0 / 3.0) <= 0.1, "shuffled");
}

// 8. Metric exactness.
void criterion_8(Outcome& o) {
    const double f1 = macro_f1(ConfusionMatrix::from_rows({{5, 5}, {5, 5}}));
    const auto agg = aggregate_seeds({{{"macro_f1", 0.8}}, {{"macro_f1", 0.9}}}).at("macro_f1");
    o.detail << "macro_f1 " << f1 << ", aggregate (" << agg.mean << ", " << agg.std << ")";
    o.expect(f1 == 0.5, "macro_f1");
    o.expect(std::abs(agg.mean - 0.85) <= 1e-4 && std::abs(agg.std - 0.0707) <= 1e-4, "aggregate");
}

// 9. Patch-count law.
void criterion_9(Outcome& o) {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> dim(96, 700);
    int mismatches = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const int h = dim(rng), w = dim(rng);
        const auto patches = extract_grid_patches(Image(1, h, w), "img", Subset::synthetic);
        const auto brute = oracle::grid_offsets(h, w, 96, 64);
        const std::int64_t closed = ((h - 96) / 64 + 1) * static_cast<std::int64_t>((w - 96) / 64 + 1);
        bool ok = static_cast<std::int64_t>(patches.size()) == closed && grid_patch_count(h, w) == closed &&
                  brute.size() == patches.size();
        for (std::size_t k = 0; ok && k < brute.size(); ++k)
            ok = patches[k].row == brute[k].first && patches[k].col == brute[k].second;
        mismatches += ok ? 0 : 1;
    }
    const auto big = extract_grid_patches(Image(1, 512, 1024), "big", Subset::real).size();
    o.detail << mismatches << " mismatches over 50 sizes, 512x1024 -> " << big;
    o.expect(mismatches == 0, "random sizes");
    o.expect(big == 105, "512x1024");
}

// 10. Config fidelity.
void criterion_10(Outcome& o) {
    const PretrainConfig cfg;
    const auto j = cfg.to_json();
    o.expect(j.at("loss").at("lambda") == 0.1, "lambda");
    o.expect(j.at("proj_dim") == 16, "proj_dim");
    o.expect(j.at("views") == 4, "views");
    o.expect(j.at("batch_size") == 1024, "batch_size");
    o.expect(j.at("optimizer").at("weight_decay") == 0.05, "weight_decay");
    o.expect(j.at("optimizer").at("lr") == 1.4e-3, "lr");
    o.expect(j.at("schedule").at("warmup_epochs") == 1 && j.at("schedule").at("decay") == "cosine", "schedule");
    o.expect(j.at("epochs") == 100, "epochs");
    const std::int64_t spe = steps_per_epoch(6000, cfg.batch_size);
    const double start = lr_at(0, cfg, spe);
    const double peak = lr_at(spe, cfg, spe);
    const double end = lr_at(cfg.epochs * spe, cfg, spe);
    o.detail << "lr_at start " << start << ", warmup end " << peak << ", final " << end;
    o.expect(start == 0.0, "lr at step 0");
    o.expect(std::abs(peak - 1.4e-3) <= 1e-15, "lr at warmup end");
    o.expect(end <= 1e-6 * 1.4e-3, "lr at final step");
}

// 11. Reproducibility.
void criterion_11(Outcome& o) {
    const auto data = unlabeled_synthetic(96, 111);
    PretrainConfig cfg;
    cfg.encoder = EncoderSpec::preset(Arch::toy_conv);
    cfg.data_mode = DataMode::synthetic;
    cfg.batch_size = 32;
    cfg.views = 2;
    cfg.augment = AugmentPolicy::from_preset(AugPreset::sss_adapted, 2);
    cfg.epochs = 2;
    cfg.loss.num_slices = 32;
    cfg.diagnostic_patches = 32;
    cfg.seed = 11;
    auto trajectory = [&] {
        std::vector<double> out;
        for (const auto& s : pretrain(data, cfg).record.steps) out.push_back(s.total);
        return out;
    };
    const auto a = trajectory(), b = trajectory();
    o.detail << a.size() << " steps, final loss " << (a.empty() ? 0.0 : a.back());
    o.expect(!a.empty() && a == b, "identical trajectories");
}

} // namespace

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    const std::vector<std::pair<int, std::function<void(Outcome&)>>> criteria{
        {1, criterion_1}, {2, criterion_2}, {3, criterion_3}, {4, criterion_4},   {5, criterion_5},   {6, criterion_6},
        {7, criterion_7}, {8, criterion_8}, {9, criterion_9}, {10, criterion_10}, {11, criterion_11}};
    std::set<int> wanted;
    for (int k = 1; k < argc; ++k) wanted.insert(std::atoi(argv[k]));
    int failed = 0;
    for (const auto& [id, run] : criteria) {
        if (!wanted.empty() && !wanted.count(id)) continue;
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            run(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << " [exception: " << e.what() << "]";
        }
        std::printf("%s criterion %d: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, o.detail.str().c_str(),
                    seconds_since(t0));
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    std::printf("%d criteria failed\n", failed);
    return failed ? 1 : 0;
}
