#include "probe.hpp"

#include "augment.hpp"
#include "common.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <set>

namespace sonarssl {

using nlohmann::json;
namespace nn = torch::nn;

std::string_view to_string(ProbeMode mode) {
    switch (mode) {
    case ProbeMode::linear: return "linear";
    case ProbeMode::mlp: return "mlp";
    case ProbeMode::finetune: return "finetune";
    case ProbeMode::finetune_mlp: return "finetune_mlp";
    }
    return "?";
}

std::string_view to_string(Task task) { return task == Task::three_class ? "three_class" : "binary"; }

ProbeMode parse_probe_mode(std::string_view text) {
    for (ProbeMode m : {ProbeMode::linear, ProbeMode::mlp, ProbeMode::finetune, ProbeMode::finetune_mlp}) {
        if (to_string(m) == text) return m;
    }
    throw Error(ErrorCode::invalid_argument, "unknown probe mode '" + std::string(text) + "'");
}

Task parse_task(std::string_view text) {
    if (text == "three_class") return Task::three_class;
    if (text == "binary") return Task::binary;
    throw Error(ErrorCode::invalid_argument, "unknown task '" + std::string(text) + "'");
}

int num_classes(Task task) { return task == Task::three_class ? kNumClasses : 2; }

int task_label(Label label, Task task) {
    if (task == Task::three_class) return static_cast<int>(label);
    return label == Label::milco ? 1 : 0;
}

std::vector<std::string> class_names(Task task) {
    if (task == Task::binary) return {"non-mine", "mine"};
    return {"BG", "MILCO", "NOMBO"};
}

void ProbeConfig::validate() const {
    require_arg(head_lr > 0.0 && backbone_lr > 0.0, "probe learning rates must be positive");
    require_arg(weight_decay >= 0.0, "weight_decay must be >= 0");
    require_arg(max_epochs >= 1, "max_epochs must be >= 1");
    require_arg(patience >= 1, "patience must be >= 1");
    require_arg(batch_size >= 1, "batch_size must be >= 1");
    require_arg(seeds.size() >= 2, "at least two seeds are needed for mean/std aggregation");
    require_arg(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(), "seeds must be distinct");
    require_arg(hidden >= 1, "hidden width must be >= 1");
}

json ProbeConfig::to_json() const {
    return json{{"mode", std::string(to_string(mode))},
                {"task", std::string(to_string(task))},
                {"head_lr", head_lr},
                {"backbone_lr", backbone_lr},
                {"weight_decay", weight_decay},
                {"max_epochs", max_epochs},
                {"patience", patience},
                {"batch_size", batch_size},
                {"seeds", seeds},
                {"hidden", hidden},
                {"standardize", standardize},
                {"optimizer", "adamw"},
                {"schedule", "cosine"},
                {"monitor", "val_macro_f1"}};
}

ProbeConfig ProbeConfig::from_json(const json& j) {
    ProbeConfig c;
    try {
        c.mode = parse_probe_mode(j.value("mode", std::string("linear")));
        c.task = parse_task(j.value("task", std::string("three_class")));
        c.head_lr = j.value("head_lr", c.head_lr);
        c.backbone_lr = j.value("backbone_lr", c.backbone_lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.max_epochs = j.value("max_epochs", c.max_epochs);
        c.patience = j.value("patience", c.patience);
        c.batch_size = j.value("batch_size", c.batch_size);
        if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        c.hidden = j.value("hidden", c.hidden);
        c.standardize = j.value("standardize", c.standardize);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::format, std::string("bad probe config: ") + e.what());
    }
    c.validate();
    return c;
}

ConfusionMatrix::ConfusionMatrix(int classes) : k(classes), counts(static_cast<std::size_t>(classes * classes), 0) {
    require_arg(classes >= 1, "confusion matrix needs at least one class");
}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::int64_t>>& rows) {
    ConfusionMatrix cm(static_cast<int>(rows.size()));
    for (int t = 0; t < cm.k; ++t) {
        require_arg(static_cast<int>(rows[t].size()) == cm.k, "confusion matrix must be square");
        for (int p = 0; p < cm.k; ++p) {
            require_arg(rows[t][p] >= 0, "confusion counts must be nonnegative");
            cm.at(t, p) = rows[t][p];
        }
    }
    return cm;
}

ConfusionMatrix ConfusionMatrix::from_predictions(std::span<const int> truth, std::span<const int> pred, int classes) {
    require_arg(truth.size() == pred.size(), "truth and prediction lengths differ");
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        require_arg(truth[i] >= 0 && truth[i] < classes && pred[i] >= 0 && pred[i] < classes, "class index out of range");
        ++cm.at(truth[i], pred[i]);
    }
    return cm;
}

std::int64_t ConfusionMatrix::row_sum(int t) const {
    std::int64_t s = 0;
    for (int p = 0; p < k; ++p) s += at(t, p);
    return s;
}

std::int64_t ConfusionMatrix::col_sum(int p) const {
    std::int64_t s = 0;
    for (int t = 0; t < k; ++t) s += at(t, p);
    return s;
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t s = 0;
    for (auto c : counts) s += c;
    return s;
}

std::vector<double> per_class_f1(const ConfusionMatrix& cm) {
    require_arg(cm.total() > 0, "confusion matrix is all zero");
    std::vector<double> f1(static_cast<std::size_t>(cm.k), 0.0);
    for (int c = 0; c < cm.k; ++c) {
        const auto tp = static_cast<double>(cm.at(c, c));
        const double denom = static_cast<double>(cm.row_sum(c) + cm.col_sum(c));
        f1[static_cast<std::size_t>(c)] = denom > 0 ? 2.0 * tp / denom : 0.0;
    }
    return f1;
}

std::vector<double> per_class_recall(const ConfusionMatrix& cm) {
    require_arg(cm.total() > 0, "confusion matrix is all zero");
    std::vector<double> r(static_cast<std::size_t>(cm.k), 0.0);
    for (int c = 0; c < cm.k; ++c) {
        const auto n = cm.row_sum(c);
        r[static_cast<std::size_t>(c)] = n > 0 ? static_cast<double>(cm.at(c, c)) / static_cast<double>(n) : 0.0;
    }
    return r;
}

double macro_f1(const ConfusionMatrix& cm) {
    const auto f1 = per_class_f1(cm);
    double s = 0.0;
    for (double v : f1) s += v;
    return s / static_cast<double>(f1.size());
}

double accuracy(const ConfusionMatrix& cm) {
    require_arg(cm.total() > 0, "confusion matrix is all zero");
    std::int64_t diag = 0;
    for (int c = 0; c < cm.k; ++c) diag += cm.at(c, c);
    return static_cast<double>(diag) / static_cast<double>(cm.total());
}

ConfusionMatrix merge_binary(const ConfusionMatrix& three) {
    require_arg(three.k == kNumClasses, "binary merge needs a 3-class matrix");
    ConfusionMatrix out(2);
    for (int t = 0; t < three.k; ++t) {
        for (int p = 0; p < three.k; ++p) {
            out.at(task_label(static_cast<Label>(t), Task::binary), task_label(static_cast<Label>(p), Task::binary)) +=
                three.at(t, p);
        }
    }
    return out;
}

std::map<std::string, double> SeedMetrics::scalars(const std::vector<std::string>& names) const {
    std::map<std::string, double> out{{"macro_f1", macro_f1}, {"accuracy", accuracy}};
    for (std::size_t c = 0; c < names.size() && c < class_f1.size(); ++c) {
        out["f1/" + names[c]] = class_f1[c];
        out["recall/" + names[c]] = class_recall[c];
    }
    return out;
}

json SeedMetrics::to_json(const std::vector<std::string>& names) const {
    json rows = json::array();
    for (int t = 0; t < confusion.k; ++t) {
        json row = json::array();
        for (int p = 0; p < confusion.k; ++p) row.push_back(confusion.at(t, p));
        rows.push_back(row);
    }
    return json{{"seed", seed},
                {"metrics", scalars(names)},
                {"confusion", rows},
                {"best_epoch", best_epoch},
                {"val_macro_f1", val_macro_f1}};
}

std::map<std::string, MetricSummary> aggregate_seeds(const std::vector<std::map<std::string, double>>& records) {
    require_arg(records.size() >= 2, "aggregation needs at least two seeds");
    std::map<std::string, MetricSummary> out;
    for (std::size_t r = 1; r < records.size(); ++r) {
        bool same = records[r].size() == records[0].size();
        for (auto it = records[r].begin(), jt = records[0].begin(); same && it != records[r].end(); ++it, ++jt) {
            same = it->first == jt->first;
        }
        require_arg(same, "seed records have inconsistent metric keys");
    }
    for (const auto& [key, unused] : records[0]) {
        std::vector<double> v;
        for (const auto& rec : records) v.push_back(rec.at(key));
        // Sorted summation keeps the result independent of seed order.
        std::sort(v.begin(), v.end());
        double sum = 0.0;
        for (double x : v) sum += x;
        const double mean = sum / static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        out[key] = {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
    }
    return out;
}

std::string ProbeResult::compute_hash(const json& config, const json& representation) {
    return hex64(fnv1a64(json{{"probe", config}, {"representation", representation}}.dump()));
}

json ProbeResult::to_json() const {
    json seeds_j = json::array();
    for (const auto& s : seeds) seeds_j.push_back(s.to_json(class_names));
    json agg = json::object();
    for (const auto& [k, v] : aggregate) agg[k] = {{"mean", v.mean}, {"std", v.std}};
    return json{{"format", "sonarssl-probe-result"},
                {"config", config},
                {"representation", representation},
                {"config_hash", config_hash},
                {"class_names", class_names},
                {"seeds", seeds_j},
                {"aggregate", agg}};
}

ProbeResult ProbeResult::from_json(const json& j) {
    require(j.value("format", std::string()) == "sonarssl-probe-result", ErrorCode::format, "not a probe result");
    ProbeResult r;
    try {
        r.config = j.at("config");
        r.representation = j.at("representation");
        r.config_hash = j.at("config_hash").get<std::string>();
        r.class_names = j.at("class_names").get<std::vector<std::string>>();
        for (const auto& s : j.at("seeds")) {
            SeedMetrics m;
            m.seed = s.at("seed").get<std::uint64_t>();
            const auto metrics = s.at("metrics").get<std::map<std::string, double>>();
            m.macro_f1 = metrics.at("macro_f1");
            m.accuracy = metrics.at("accuracy");
            for (const auto& name : r.class_names) {
                m.class_f1.push_back(metrics.at("f1/" + name));
                m.class_recall.push_back(metrics.at("recall/" + name));
            }
            m.confusion = ConfusionMatrix::from_rows(s.at("confusion").get<std::vector<std::vector<std::int64_t>>>());
            m.best_epoch = s.value("best_epoch", 0);
            m.val_macro_f1 = s.value("val_macro_f1", 0.0);
            r.seeds.push_back(std::move(m));
        }
        for (const auto& [k, v] : j.at("aggregate").items()) {
            r.aggregate[k] = {v.at("mean").get<double>(), v.at("std").get<double>()};
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::format, std::string("bad probe result: ") + e.what());
    }
    return r;
}

namespace {

struct Head : nn::Module {
    nn::Linear fc1{nullptr}, fc2{nullptr};
    Head(int in, int classes, bool mlp, int hidden) {
        if (mlp) {
            fc1 = register_module("fc1", nn::Linear(in, hidden));
            fc2 = register_module("fc2", nn::Linear(hidden, classes));
        } else {
            fc2 = register_module("fc2", nn::Linear(in, classes));
        }
    }
    torch::Tensor forward(torch::Tensor x) {
        if (fc1) x = torch::relu(fc1->forward(x));
        return fc2->forward(x);
    }
};

std::vector<torch::Tensor> snapshot(const std::vector<torch::Tensor>& params) {
    std::vector<torch::Tensor> out;
    for (const auto& p : params) out.push_back(p.detach().clone());
    return out;
}

void restore(const std::vector<torch::Tensor>& params, const std::vector<torch::Tensor>& saved) {
    torch::NoGradGuard guard;
    for (std::size_t k = 0; k < params.size(); ++k) params[k].copy_(saved[k]);
}

std::vector<int> argmax_rows(const torch::Tensor& logits) {
    const auto idx = logits.argmax(1).to(torch::kInt64).contiguous();
    std::vector<int> out(static_cast<std::size_t>(idx.size(0)));
    const auto* p = idx.data_ptr<std::int64_t>();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(p[i]);
    return out;
}

torch::Tensor labels_tensor(const std::vector<int>& y) {
    std::vector<std::int64_t> v(y.begin(), y.end());
    return torch::tensor(v, torch::kInt64);
}

void require_all_classes(const std::vector<int>& y, int classes, const std::string& split) {
    std::vector<bool> seen(static_cast<std::size_t>(classes), false);
    for (int v : y) seen[static_cast<std::size_t>(v)] = true;
    for (int c = 0; c < classes; ++c) {
        require_arg(seen[static_cast<std::size_t>(c)], "class " + std::to_string(c) + " is absent from the " + split + " split");
    }
}

// Model-agnostic training loop: `logits(idx, train)` scores the listed train rows,
// `eval(split)` scores a whole evaluation split.
SeedMetrics train_seed(std::uint64_t seed, const std::vector<int>& train_y, const std::vector<int>& val_y,
                       const std::vector<int>& test_y, int classes, const ProbeConfig& cfg,
                       torch::optim::AdamW& opt, const std::vector<double>& base_lrs,
                       const std::vector<torch::Tensor>& params,
                       const std::function<torch::Tensor(const std::vector<std::int64_t>&)>& train_logits,
                       const std::function<torch::Tensor(int)>& eval_logits) {
    const auto n = static_cast<std::int64_t>(train_y.size());
    const torch::Tensor y_all = labels_tensor(train_y);
    std::mt19937_64 rng(derive_seed({seed, 0x5b0eULL}));
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    SeedMetrics m;
    m.seed = seed;
    double best = -1.0;
    std::vector<torch::Tensor> best_params = snapshot(params);
    int since_best = 0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double factor = 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / cfg.max_epochs));
        for (std::size_t g = 0; g < opt.param_groups().size(); ++g) {
            static_cast<torch::optim::AdamWOptions&>(opt.param_groups()[g].options()).lr(base_lrs[g] * factor);
        }
        std::shuffle(order.begin(), order.end(), rng);
        for (std::int64_t start = 0; start < n; start += cfg.batch_size) {
            std::vector<std::int64_t> idx(order.begin() + start, order.begin() + std::min(n, start + cfg.batch_size));
            opt.zero_grad();
            const auto logits = train_logits(idx);
            const auto loss = torch::nn::functional::cross_entropy(logits, y_all.index({torch::tensor(idx)}));
            loss.backward();
            opt.step();
        }
        const double val = macro_f1(ConfusionMatrix::from_predictions(val_y, argmax_rows(eval_logits(1)), classes));
        m.val_history.push_back(val);
        if (val > best) {
            best = val;
            best_params = snapshot(params);
            m.best_epoch = epoch + 1;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    restore(params, best_params);
    m.val_macro_f1 = best;
    m.val_after_restore = macro_f1(ConfusionMatrix::from_predictions(val_y, argmax_rows(eval_logits(1)), classes));
    m.confusion = ConfusionMatrix::from_predictions(test_y, argmax_rows(eval_logits(2)), classes);
    m.macro_f1 = macro_f1(m.confusion);
    m.accuracy = accuracy(m.confusion);
    m.class_f1 = per_class_f1(m.confusion);
    m.class_recall = per_class_recall(m.confusion);
    return m;
}

} // namespace

std::vector<SeedMetrics> run_feature_probe(const FeatureSet& train, const FeatureSet& val, const FeatureSet& test,
                                           int classes, const ProbeConfig& cfg) {
    cfg.validate();
    for (const FeatureSet* s : {&train, &val, &test}) {
        require(s->x.dim() == 2 && s->x.size(0) == static_cast<std::int64_t>(s->y.size()), ErrorCode::shape_mismatch,
                "feature rows and labels differ in count");
        require_arg(!s->y.empty(), "probe splits must be nonempty");
        for (int v : s->y) require_arg(v >= 0 && v < classes, "label out of range");
    }
    require(train.x.size(1) == val.x.size(1) && train.x.size(1) == test.x.size(1), ErrorCode::shape_mismatch,
            "feature widths differ between splits");
    require_all_classes(train.y, classes, "train");

    torch::Tensor mean = torch::zeros({train.x.size(1)});
    torch::Tensor std = torch::ones({train.x.size(1)});
    if (cfg.standardize) {
        mean = train.x.mean(0);
        std = train.x.std(0, false).clamp_min(1e-6);
    }
    const torch::Tensor xs[3] = {(train.x - mean) / std, (val.x - mean) / std, (test.x - mean) / std};

    std::vector<SeedMetrics> out;
    for (std::uint64_t seed : cfg.seeds) {
        torch::manual_seed(derive_seed({seed, 0x4eadULL}));
        Head head(static_cast<int>(train.x.size(1)), classes, cfg.mlp_head(), cfg.hidden);
        const auto params = head.parameters();
        torch::optim::AdamW opt(params, torch::optim::AdamWOptions(cfg.head_lr).weight_decay(cfg.weight_decay));
        out.push_back(train_seed(
            seed, train.y, val.y, test.y, classes, cfg, opt, {cfg.head_lr}, params,
            [&](const std::vector<std::int64_t>& idx) { return head.forward(xs[0].index({torch::tensor(idx)})); },
            [&](int split) {
                torch::NoGradGuard guard;
                return head.forward(xs[split]);
            }));
    }
    return out;
}

json describe_initial(const Encoder& encoder) {
    const auto& spec = encoder.spec();
    json r{{"arch", std::string(to_string(spec.arch))},
           {"init", spec.init_mode == InitMode::random ? "random" : "external"},
           {"objective", "none"},
           {"data_mode", "none"},
           {"lambda", nullptr},
           {"augment", "none"},
           {"proj_dim", spec.proj_dim()},
           {"params", encoder.backbone_param_count()},
           {"spec_hash", spec.hash()}};
    if (spec.init_mode == InitMode::external_checkpoint) r["init_checkpoint"] = spec.checkpoint_path;
    return r;
}

json describe_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, const Encoder& encoder) {
    json r = describe_initial(encoder);
    const auto& meta = ckpt.metadata;
    if (meta.contains("encoder")) {
        const auto spec = EncoderSpec::from_json(meta.at("encoder"));
        r["init"] = spec.init_mode == InitMode::random ? "random" : "external";
        if (spec.init_mode == InitMode::external_checkpoint) r["init_checkpoint"] = spec.checkpoint_path;
    }
    if (meta.contains("config")) {
        const auto& cfg = meta.at("config");
        r["objective"] = cfg.value("objective", std::string("none"));
        r["data_mode"] = cfg.value("data_mode", std::string("none"));
        if (r["objective"] == "sigreg" && cfg.contains("loss")) r["lambda"] = cfg.at("loss").value("lambda", 0.0);
        if (cfg.contains("augment")) r["augment"] = cfg.at("augment").value("preset", std::string("none"));
        r["epochs"] = cfg.value("epochs", 0);
    }
    r["checkpoint"] = path.generic_string();
    r["checkpoint_kind"] = meta.value("kind", std::string());
    r["step"] = meta.value("step", 0);
    r["run_config_hash"] = meta.value("config_hash", std::string());
    return r;
}

ProbeResult run_probe(const Encoder& encoder, const PatchDataset& data, const ProbeConfig& cfg, json representation) {
    cfg.validate();
    const int classes = num_classes(cfg.task);
    std::vector<Image> inputs[3];
    std::vector<int> labels[3];
    const Split splits[3] = {Split::train, Split::val, Split::test};
    for (int s = 0; s < 3; ++s) {
        for (std::size_t i : data.labeled_indices(splits[s])) {
            inputs[s].push_back(prepare_eval_input(data.pixels[i], data.stats_for(i)));
            labels[s].push_back(task_label(*data.manifest.entries[i].label, cfg.task));
        }
        require_arg(!inputs[s].empty(), "labeled " + std::string(to_string(splits[s])) + " split is empty");
    }
    require_all_classes(labels[0], classes, "train");

    ProbeResult result;
    result.config = cfg.to_json();
    result.representation = std::move(representation);
    result.config_hash = ProbeResult::compute_hash(result.config, result.representation);
    result.class_names = class_names(cfg.task);

    if (cfg.frozen()) {
        // Read-only use of the backbone: a private copy encodes every split once.
        Encoder frozen = encoder.clone();
        FeatureSet sets[3];
        for (int s = 0; s < 3; ++s) sets[s] = {frozen.encode(inputs[s]).h, labels[s]};
        result.seeds = run_feature_probe(sets[0], sets[1], sets[2], classes, cfg);
    } else {
        torch::Tensor x[3];
        for (int s = 0; s < 3; ++s) x[s] = to_tensor(inputs[s]);
        for (std::uint64_t seed : cfg.seeds) {
            Encoder model = encoder.clone();
            torch::manual_seed(derive_seed({seed, 0x4eadULL}));
            Head head(model.feature_dim(), classes, cfg.mlp_head(), cfg.hidden);
            std::vector<torch::Tensor> params = model.backbone_parameters();
            const auto head_params = head.parameters();
            std::vector<torch::optim::OptimizerParamGroup> groups;
            groups.emplace_back(model.backbone_parameters(),
                                std::make_unique<torch::optim::AdamWOptions>(
                                    torch::optim::AdamWOptions(cfg.backbone_lr).weight_decay(cfg.weight_decay)));
            groups.emplace_back(head_params, std::make_unique<torch::optim::AdamWOptions>(
                                                 torch::optim::AdamWOptions(cfg.head_lr).weight_decay(cfg.weight_decay)));
            torch::optim::AdamW opt(std::move(groups));
            for (const auto& p : head_params) params.push_back(p);
            result.seeds.push_back(train_seed(
                seed, labels[0], labels[1], labels[2], classes, cfg, opt, {cfg.backbone_lr, cfg.head_lr}, params,
                [&](const std::vector<std::int64_t>& idx) {
                    model.train(true);
                    return head.forward(model.features(x[0].index({torch::tensor(idx)})));
                },
                [&](int split) {
                    model.train(false);
                    torch::NoGradGuard guard;
                    std::vector<torch::Tensor> parts;
                    for (std::int64_t r = 0; r < x[split].size(0); r += 256) {
                        parts.push_back(head.forward(model.features(x[split].slice(0, r, std::min(x[split].size(0), r + 256)))));
                    }
                    return torch::cat(parts);
                }));
        }
    }
    std::vector<std::map<std::string, double>> records;
    for (const auto& s : result.seeds) records.push_back(s.scalars(result.class_names));
    result.aggregate = aggregate_seeds(records);
    return result;
}

} // namespace sonarssl
