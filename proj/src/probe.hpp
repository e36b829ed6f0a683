#pragma once

// Probe evaluation: frozen (linear / mlp) and fine-tuned heads, macro-F1,
// multi-seed aggregation.

#include "encoder.hpp"
#include "manifest.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace sonarssl {

enum class ProbeMode { linear, mlp, finetune, finetune_mlp };
enum class Task { three_class, binary };

std::string_view to_string(ProbeMode mode);
std::string_view to_string(Task task);
ProbeMode parse_probe_mode(std::string_view text);
Task parse_task(std::string_view text);

int num_classes(Task task);
/// Binary: MILCO -> 1 (mine), BG and NOMBO -> 0 (non-mine).
int task_label(Label label, Task task);
std::vector<std::string> class_names(Task task);

struct ProbeConfig {
    ProbeMode mode = ProbeMode::linear;
    Task task = Task::three_class;
    double head_lr = 1e-3;
    double backbone_lr = 1e-4;
    double weight_decay = 1e-4;
    int max_epochs = 100;
    int patience = 10;
    int batch_size = 64;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    int hidden = 512;
    bool standardize = true; // z-score frozen features with train statistics

    bool frozen() const { return mode == ProbeMode::linear || mode == ProbeMode::mlp; }
    bool mlp_head() const { return mode == ProbeMode::mlp || mode == ProbeMode::finetune_mlp; }
    void validate() const;
    nlohmann::json to_json() const;
    static ProbeConfig from_json(const nlohmann::json& j);
};

/// Rows are true classes, columns predictions.
struct ConfusionMatrix {
    int k = 0;
    std::vector<std::int64_t> counts;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int classes);
    static ConfusionMatrix from_rows(const std::vector<std::vector<std::int64_t>>& rows);
    static ConfusionMatrix from_predictions(std::span<const int> truth, std::span<const int> pred, int classes);

    std::int64_t& at(int t, int p) { return counts[static_cast<std::size_t>(t * k + p)]; }
    std::int64_t at(int t, int p) const { return counts[static_cast<std::size_t>(t * k + p)]; }
    std::int64_t row_sum(int t) const;
    std::int64_t col_sum(int p) const;
    std::int64_t total() const;
    bool operator==(const ConfusionMatrix&) const = default;
};

/// A class with no true and no predicted instances scores F1 = 0.
std::vector<double> per_class_f1(const ConfusionMatrix& cm);
std::vector<double> per_class_recall(const ConfusionMatrix& cm);
double macro_f1(const ConfusionMatrix& cm);
double accuracy(const ConfusionMatrix& cm);
/// Sums the BG and NOMBO rows/columns of a 3-class matrix into non-mine.
ConfusionMatrix merge_binary(const ConfusionMatrix& three_class);

struct SeedMetrics {
    std::uint64_t seed = 0;
    double macro_f1 = 0;
    double accuracy = 0;
    std::vector<double> class_f1;
    std::vector<double> class_recall;
    ConfusionMatrix confusion;
    int best_epoch = 0;
    double val_macro_f1 = 0;
    std::vector<double> val_history; // val macro-F1 after each epoch (not serialized)
    double val_after_restore = 0;    // val macro-F1 of the restored parameters (not serialized)

    /// Scalar metrics keyed by name, e.g. "macro_f1", "f1/MILCO", "recall/BG".
    std::map<std::string, double> scalars(const std::vector<std::string>& names) const;
    nlohmann::json to_json(const std::vector<std::string>& names) const;
};

struct MetricSummary {
    double mean = 0;
    double std = 0; // sample standard deviation (n - 1)
};

/// Mean and sample std per key. Needs >= 2 records sharing one key set.
std::map<std::string, MetricSummary> aggregate_seeds(const std::vector<std::map<std::string, double>>& records);

struct ProbeResult {
    nlohmann::json config;
    nlohmann::json representation; // provenance of the probed backbone
    std::string config_hash;
    std::vector<std::string> class_names;
    std::vector<SeedMetrics> seeds;
    std::map<std::string, MetricSummary> aggregate;

    nlohmann::json to_json() const;
    static ProbeResult from_json(const nlohmann::json& j);
    /// Hash over the probe config and the representation block.
    static std::string compute_hash(const nlohmann::json& config, const nlohmann::json& representation);
};

struct FeatureSet {
    torch::Tensor x; // N x D
    std::vector<int> y;
};

/// Trains and evaluates a head on fixed features, one run per seed.
std::vector<SeedMetrics> run_feature_probe(const FeatureSet& train, const FeatureSet& val, const FeatureSet& test,
                                           int classes, const ProbeConfig& cfg);

/// Representation block of a pretraining checkpoint: arch, init, objective,
/// data_mode, lambda, augment, proj_dim, params, checkpoint and run hashes.
nlohmann::json describe_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, const Encoder& encoder);
/// Representation block of an encoder that was never pretrained.
nlohmann::json describe_initial(const Encoder& encoder);

/// Full protocol on the labeled train/val/test splits of `data`. Frozen modes encode
/// every patch once and reuse the features across seeds; finetune modes train a copy
/// of the backbone per seed. `encoder` is never modified.
ProbeResult run_probe(const Encoder& encoder, const PatchDataset& data, const ProbeConfig& cfg,
                      nlohmann::json representation = nlohmann::json::object());

} // namespace sonarssl
