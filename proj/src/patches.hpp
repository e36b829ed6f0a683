#pragma once

// Stage 1: grid and annotation-driven patch extraction, stratified splits and
// per-subset normalization statistics.

#include "types.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace sonarssl {

inline constexpr int kDefaultStride = 64;
inline constexpr int kDefaultBackgroundPerImage = 3;

/// Closed-form count of sliding-window positions without padding.
std::int64_t grid_patch_count(int height, int width, int window = kPatchSize, int stride = kDefaultStride);

/// Row-major sliding-window patches; trailing margins are dropped.
std::vector<PatchTensor> extract_grid_patches(const Image& image, const std::string& source_id, Subset subset,
                                              int window = kPatchSize, int stride = kDefaultStride);

/// `count` window offsets (row, col) whose window overlaps none of `boxes`.
/// Throws after a bounded number of rejected draws.
std::vector<std::pair<int, int>> sample_background_windows(int height, int width, std::span<const Box> boxes,
                                                           int window, int count, std::uint64_t seed,
                                                           int retry_budget = 2000);

/// Window offset for an object-centred crop, clamped to the image.
std::pair<int, int> centered_window(const Box& box, int height, int width, int window = kPatchSize);

/// One object-centred patch per annotation, then `bg_per_image` background
/// patches when the image carries at least one annotation.
std::vector<LabeledPatch> extract_labeled_patches(const Image& image, std::span<const Annotation> annotations,
                                                  const std::string& source_id, Subset subset,
                                                  int bg_per_image = kDefaultBackgroundPerImage,
                                                  std::uint64_t seed = 0, int window = kPatchSize);

enum class StratifyBy { annotation_presence, class_label };

struct SplitSpec {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
    StratifyBy stratify_by = StratifyBy::annotation_presence;
    std::uint64_t seed = 0;

    void validate() const;
    /// Strata that must be populated for this stratification.
    std::vector<std::string> required_strata() const;
};

/// Assigns a split to every item given its stratum key. Per stratum the
/// train/val counts are the rounded fractions and test takes the remainder.
std::vector<Split> make_splits(std::span<const std::string> strata, const SplitSpec& spec);

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> std;
    bool operator==(const ChannelStats&) const = default;
};

inline constexpr double kStdFloor = 1e-6;

/// Per-channel statistics over every pixel of the given patches (one subset).
ChannelStats compute_channel_stats(std::span<const Image* const> patches);

/// Statistics per subset; each subset keeps its native channel count.
std::map<Subset, ChannelStats> compute_subset_stats(const std::map<Subset, std::vector<const Image*>>& groups);

/// Standardizes `image` in place. Single-channel stats broadcast over all channels.
void normalize_in_place(Image& image, const ChannelStats& stats);

} // namespace sonarssl
