#pragma once

// Backbone (ViT or small conv net) plus the MLP projector.

#include "image.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace sonarssl {

enum class Arch { vit_tiny, vit_small, toy_conv };
enum class Pooling { mean_tokens, class_token };
enum class InitMode { random, external_checkpoint };

std::string_view to_string(Arch arch);
std::string_view to_string(Pooling pooling);
std::string_view to_string(InitMode mode);
Arch parse_arch(std::string_view text);
Pooling parse_pooling(std::string_view text);
InitMode parse_init_mode(std::string_view text);

inline constexpr int kProjectorDim = 16;

struct EncoderSpec {
    Arch arch = Arch::vit_tiny;
    int input_size = 96;
    int patch_size = 16;
    int embed_dim = 192;
    int depth = 12;
    int heads = 3;
    Pooling pooling = Pooling::mean_tokens;
    InitMode init_mode = InitMode::random;
    std::string checkpoint_path;
    // Hidden widths followed by the output dimension d.
    std::vector<int> projector_widths{192, kProjectorDim};

    static EncoderSpec preset(Arch arch);

    int proj_dim() const { return projector_widths.back(); }
    /// Replaces the projector output dimension, keeping hidden widths.
    void set_proj_dim(int d);
    int num_tokens() const;
    void validate() const;

    nlohmann::json to_json() const;
    static EncoderSpec from_json(const nlohmann::json& j);
    std::string hash() const;
};

struct Embeddings {
    torch::Tensor h; // N x D backbone features
    torch::Tensor z; // N x d projections
};

struct LoadReport {
    std::vector<std::string> loaded;
    std::vector<std::string> skipped; // present in the file, unused by the model
    std::vector<std::string> missing; // expected by the model, absent from the file
};

class EncoderImpl;

class Encoder {
public:
    /// Random init from `seed`, then the backbone checkpoint when init_mode asks for it.
    /// The projector is always a fresh seeded draw.
    Encoder(const EncoderSpec& spec, std::uint64_t seed);
    ~Encoder();
    Encoder(Encoder&&) noexcept;
    Encoder& operator=(Encoder&&) noexcept;
    Encoder(const Encoder&) = delete;
    Encoder& operator=(const Encoder&) = delete;

    const EncoderSpec& spec() const;
    int feature_dim() const;
    int proj_dim() const;

    /// x: N x 3 x S x S. Throws on any other shape.
    Embeddings forward(const torch::Tensor& x);
    torch::Tensor features(const torch::Tensor& x);
    /// Eval-mode, no-grad convenience over prepared images.
    Embeddings encode(std::span<const Image> images, std::size_t chunk = 256);

    void train(bool on);

    std::vector<torch::Tensor> backbone_parameters() const;
    std::vector<torch::Tensor> projector_parameters() const;
    std::vector<torch::Tensor> parameters() const;
    std::int64_t backbone_param_count() const;
    std::int64_t projector_param_count() const;

    /// Fully qualified names: "backbone.*" and "projector.*".
    std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const;

    /// Deep copy with identical parameters.
    Encoder clone() const;
    void copy_parameters_from(const Encoder& other);

    /// Loads backbone tensors by name. Throws listing every tensor whose shape differs.
    LoadReport load_backbone(const std::vector<std::pair<std::string, torch::Tensor>>& tensors);
    /// Report of the external-checkpoint load done at construction (empty for random init).
    const LoadReport& init_report() const;

private:
    Encoder();
    std::unique_ptr<EncoderImpl> impl_;
};

/// Stacks prepared 3-channel images into an N x 3 x H x W tensor.
torch::Tensor to_tensor(std::span<const Image> images);
torch::Tensor to_tensor(std::span<const Image* const> images);

// Checkpoint archive, little-endian:
//   "MJCK"  magic, u16 version (= 1)
//   u64 metadata length, metadata JSON bytes
//   u64 tensor count
//   per tensor: u32 name length, name bytes, u32 rank, rank x i64 dims, float32 data
struct Checkpoint {
    nlohmann::json metadata; // arch, spec, spec_hash, step, config_hash, ...
    std::vector<std::pair<std::string, torch::Tensor>> tensors;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Checkpoint of an encoder with the given extra metadata.
Checkpoint make_checkpoint(const Encoder& encoder, nlohmann::json metadata);

/// Rebuilds the encoder stored in a checkpoint (spec from metadata, all tensors restored).
Encoder load_encoder(const std::filesystem::path& path, LoadReport* report = nullptr);

} // namespace sonarssl
