#pragma once

// Dataset manifests (human-readable JSON, one record per patch) and the packed
// patch archive.
//
// Archive layout, all integers little-endian:
//   "MJPA"            4 bytes magic
//   version           u16 (= 1)
//   count             u64
//   count x { C u16, H u16, W u16, C*H*W float32 (channel-major planes) }

#include "patches.hpp"
#include "types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sonarssl {

inline constexpr std::uint16_t kArchiveVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kArchiveFile = "patches.mjpa";

void write_patch_archive(const std::filesystem::path& path, std::span<const Image> patches);
std::vector<Image> read_patch_archive(const std::filesystem::path& path);

struct PatchLocator {
    std::string file;
    std::uint64_t index = 0;
    bool operator==(const PatchLocator&) const = default;
};

struct ManifestEntry {
    PatchLocator locator;
    std::optional<Label> label;
    Subset subset = Subset::real;
    Split split = Split::train;
    std::string source_id;
    int row = 0;
    int col = 0;
    bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::map<Subset, ChannelStats> normalization;
    std::uint64_t split_seed = 0;

    void validate() const;
    bool operator==(const DatasetManifest&) const = default;
};

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Manifest plus the pixels of every entry, in entry order.
struct PatchDataset {
    DatasetManifest manifest;
    std::vector<Image> pixels;

    std::size_t size() const { return pixels.size(); }
    const ChannelStats& stats_for(std::size_t index) const;

    std::vector<std::size_t> unlabeled_indices() const;
    std::vector<std::size_t> labeled_indices(Split split) const;

    /// Writes `dir/manifest.json` and `dir/patches.mjpa`.
    void save(const std::filesystem::path& dir) const;
    static PatchDataset load(const std::filesystem::path& dir);
};

/// Assembles a dataset. Normalization statistics are computed per subset over
/// the train-split entries only.
PatchDataset build_dataset(std::vector<PatchTensor> unlabeled, std::vector<Split> unlabeled_splits,
                           std::vector<LabeledPatch> labeled, std::vector<Split> labeled_splits,
                           std::uint64_t split_seed);

/// Concatenates datasets; each subset keeps its own statistics record.
PatchDataset concat_datasets(std::span<const PatchDataset> parts);

} // namespace sonarssl
