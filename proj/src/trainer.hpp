#pragma once

// SSL pretraining loop: multi-view batches, warmup + cosine AdamW, per-epoch
// embedding diagnostics and checkpoints.

#include "augment.hpp"
#include "encoder.hpp"
#include "manifest.hpp"
#include "objectives.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace sonarssl {

enum class Objective { sigreg, vicreg, simclr };
enum class DataMode { real, synthetic, real_plus_syn };

std::string_view to_string(Objective objective);
std::string_view to_string(DataMode mode);
Objective parse_objective(std::string_view text);
DataMode parse_data_mode(std::string_view text);

struct PretrainConfig {
    Objective objective = Objective::sigreg;
    LossConfig loss;               // lambda, slices, quadrature
    VicregWeights vicreg;
    double temperature = 0.1;      // simclr
    int proj_dim = kProjectorDim;  // d
    int views = 4;                 // V
    int batch_size = 1024;
    int micro_batch = 0;           // patches per forward pass; 0 = whole batch
    double lr = 1.4e-3;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int warmup_epochs = 1;
    int epochs = 100;
    DataMode data_mode = DataMode::real;
    std::uint64_t seed = 0;
    AugmentPolicy augment = AugmentPolicy::from_preset(AugPreset::sss_adapted, 4);
    EncoderSpec encoder = EncoderSpec::preset(Arch::vit_tiny);
    bool checkpoint_every_epoch = true;
    int diagnostic_patches = 512;

    void validate() const;
    /// Encoder spec with the projector output set to `proj_dim`.
    EncoderSpec effective_encoder() const;

    nlohmann::json to_json() const;
    static PretrainConfig from_json(const nlohmann::json& j);
    std::string hash() const;
};

inline std::int64_t steps_per_epoch(std::int64_t n_patches, std::int64_t batch_size) {
    return (n_patches + batch_size - 1) / batch_size;
}

/// Learning rate at `step` in [0, epochs * steps_per_epoch]: linear warmup from 0
/// over `warmup_epochs` epochs, then half-cosine to 0. Optimizer step k uses lr_at(k + 1).
double lr_at(std::int64_t step, const PretrainConfig& cfg, std::int64_t steps_per_epoch);

struct StepRecord {
    std::int64_t step = 0;
    int epoch = 0;
    double lr = 0;
    double total = 0;
    std::map<std::string, double> terms;
    std::vector<double> emb_var; // per-dimension variance of the batch projections

    nlohmann::json to_json() const;
    static StepRecord from_json(const nlohmann::json& j);
};

struct EmbeddingDiagnostics {
    std::vector<double> dim_mean;
    std::vector<double> dim_var;
    double mean_std = 0;
    double mean_var = 0;
    double effective_rank = 0;
};

/// Per-dimension statistics (sample variance) and entropy effective rank of the covariance spectrum.
EmbeddingDiagnostics embedding_diagnostics(const RowMatrix& z);

struct EpochRecord {
    int epoch = 0; // 1-based
    double mean_loss = 0;
    EmbeddingDiagnostics diag;
    std::string checkpoint;

    nlohmann::json to_json() const;
    static EpochRecord from_json(const nlohmann::json& j);
};

struct RunRecord {
    nlohmann::json config;
    std::string config_hash;
    std::int64_t total_steps = 0;
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    std::vector<std::string> checkpoints;
    std::string best_checkpoint;
    std::string final_checkpoint;

    nlohmann::json to_json() const;
    static RunRecord from_json(const nlohmann::json& j);
    static RunRecord load(const std::filesystem::path& run_dir);
};

/// Normalization provenance of one assembled batch.
struct BatchProvenance {
    std::vector<std::size_t> indices;
    std::vector<Subset> subsets;
    std::vector<const ChannelStats*> stats;
};

struct ViewTensorBatch {
    torch::Tensor x; // (N*V) x 3 x 96 x 96, row i*V + v
    std::size_t n = 0;
    std::size_t views = 0;
    BatchProvenance provenance;
};

ViewTensorBatch assemble_batch(const PatchDataset& data, std::span<const std::size_t> indices,
                               const AugmentPolicy& policy, std::uint64_t run_seed, std::uint64_t epoch);

/// Patches used for pretraining: every unlabeled entry of the subsets selected by `mode`.
std::vector<std::size_t> pretrain_pool(const PatchDataset& data, DataMode mode);

struct StepLoss {
    double total = 0;
    std::map<std::string, double> terms;
    RowMatrix z; // projections of the full batch
};

/// Forward + backward of one batch; gradients are accumulated into the encoder
/// parameters. With 0 < micro_batch < n the projections are first computed without
/// gradient, the full-batch loss gradient is formed, then each micro-batch is
/// recomputed and back-propagated with its slice of dL/dz.
StepLoss compute_step_gradients(Encoder& encoder, const ViewTensorBatch& batch, const PretrainConfig& cfg,
                                std::int64_t step);

struct PretrainHooks {
    std::function<void(const StepRecord&)> on_step;
    std::function<void(const EpochRecord&)> on_epoch;
    std::function<void(const BatchProvenance&)> on_batch;
};

struct PretrainResult {
    RunRecord record;
    Encoder encoder;
};

/// Runs epochs * ceil(n / batch) optimizer steps. With a non-empty `out_dir`, writes
/// config.json, metrics.ndjson, run.json and checkpoints there.
PretrainResult pretrain(const PatchDataset& data, const PretrainConfig& cfg, const std::filesystem::path& out_dir = {},
                        const PretrainHooks& hooks = {});

} // namespace sonarssl
