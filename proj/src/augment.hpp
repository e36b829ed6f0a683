#pragma once

// Multi-view stochastic augmentation. Fixed op order:
// resized crop -> flips -> rotation (reflect border) -> photometric jitter -> blur -> normalize.

#include "patches.hpp"
#include "types.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace sonarssl {

// `custom` carries no preset constraints (e.g. the identity policy).
enum class AugPreset { sss_adapted, natural_image, custom };

std::string_view to_string(AugPreset preset);
AugPreset parse_aug_preset(std::string_view name);

struct AugmentPolicy {
    AugPreset preset = AugPreset::sss_adapted;
    int n_views = 4;
    double crop_scale_lo = 0.5;
    double crop_scale_hi = 1.0;
    double aspect_lo = 3.0 / 4.0;
    double aspect_hi = 4.0 / 3.0;
    bool hflip = true;
    bool vflip = true;
    double rotation_deg = 15.0;
    double jitter_prob = 0.8;
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.0;
    double hue = 0.0;
    double blur_prob = 0.5;
    int blur_kernel = 9;
    double blur_sigma_lo = 0.1;
    double blur_sigma_hi = 2.0;
    double solarize_prob = 0.0;
    double grayscale_prob = 0.0;

    static AugmentPolicy from_preset(AugPreset preset, int n_views = 4);
    /// Every op disabled: views equal the normalized input.
    static AugmentPolicy identity(int n_views = 2);

    /// Throws on invalid ranges or on a preset whose flags contradict it.
    void validate() const;

    nlohmann::json to_json() const;
    static AugmentPolicy from_json(const nlohmann::json& j);
};

/// Stream seed for one (run, epoch, patch) triple; views derive from it.
std::uint64_t view_stream_seed(std::uint64_t run_seed, std::uint64_t epoch, std::uint64_t patch_index);

/// Parameters drawn for one view (exposed for diagnostics and tests).
struct ViewParams {
    double crop_row = 0, crop_col = 0, crop_h = kPatchSize, crop_w = kPatchSize;
    bool hflip = false, vflip = false;
    double angle_rad = 0;
    bool jitter = false;
    double brightness = 1, contrast = 1, saturation = 1, hue = 0;
    bool grayscale = false;
    bool solarize = false;
    double blur_sigma = 0; // 0 = no blur
};

ViewParams sample_view_params(const AugmentPolicy& policy, std::uint64_t view_seed);

/// Applies one view's parameters to a [0,1]-range patch; returns a 3-channel
/// 96x96 image normalized by `stats`.
Image apply_view(const Image& patch, const ChannelStats& stats, const AugmentPolicy& policy, const ViewParams& p);

/// `policy.n_views` independent views of `patch`.
std::vector<Image> make_views(const Image& patch, const ChannelStats& stats, const AugmentPolicy& policy,
                              std::uint64_t stream_seed);

/// Un-augmented input for evaluation: replicate to 3 channels and normalize.
Image prepare_eval_input(const Image& patch, const ChannelStats& stats);

} // namespace sonarssl
