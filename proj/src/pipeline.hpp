#pragma once

// End-to-end dataset workflows behind the command-line tools: synthetic corpus
// generation and patch extraction from an image directory.

#include "manifest.hpp"
#include "patches.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace sonarssl {

/// Annotation file layout:
///   {"images": [{"file": "scene_0000.pgm",
///                "annotations": [{"label": "MILCO", "box": [row0, col0, row1, col1]}]}]}
/// Images missing from the file carry no annotations.
using AnnotationIndex = std::map<std::string, std::vector<Annotation>>;

void write_annotations(const std::filesystem::path& path, const AnnotationIndex& index);
AnnotationIndex read_annotations(const std::filesystem::path& path);

/// Netpbm (.pgm/.ppm/.pnm) or PNG, values mapped to [0,1].
Image read_image(const std::filesystem::path& path);

struct SyntheticCorpusSpec {
    int n_scenes = 8;
    int n_per_class = 100;
    std::uint64_t seed = 0;
    int scene_height = 384;
    int scene_width = 512;
};

/// Renders `n_scenes` scenes (with 0..3 objects) to `out/images/*.pgm` plus
/// `out/annotations.json`, and writes `out/dataset/` holding the scenes' grid
/// patches (unlabeled, train split) and `n_per_class` labeled patches per class
/// split 80/10/10 by class. Returns the dataset.
PatchDataset generate_synthetic_corpus(const SyntheticCorpusSpec& spec, const std::filesystem::path& out);

struct ExtractionSpec {
    int window = kPatchSize;
    int stride = kDefaultStride;
    int bg_per_image = kDefaultBackgroundPerImage;
    Subset subset = Subset::real;
    SplitSpec split; // image level, stratified by annotation presence
};

/// Grid patches from every image in `images_dir` plus labeled patches from the
/// annotated ones. Every patch inherits the split of its source image.
PatchDataset extract_dataset(const std::filesystem::path& images_dir, const AnnotationIndex& annotations,
                             const ExtractionSpec& spec);

} // namespace sonarssl
