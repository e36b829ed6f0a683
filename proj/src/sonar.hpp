#pragma once

// Parameterized side-scan-sonar-like scene generator: speckled seabed with
// highlight/shadow objects. Stands in for both the labeled benchmark and the
// grayscale synthetic pretraining corpus.

#include "types.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace sonarssl {

struct ObjectSpec {
    Label label = Label::milco; // milco or nombo
    double center_row = 0.0;
    double center_col = 0.0;
    std::array<double, 2> highlight_axes{6.0, 10.0}; // semi-axes (row, col) in pixels
    double orientation = 0.0;                         // radians
    double highlight_gain = 2.5;
    double shadow_length = 20.0;
    std::array<double, 2> shadow_direction{0.0, 1.0}; // unit (drow, dcol)
    double irregularity = 0.0;                        // 0 smooth ellipse, 1 heavily perturbed
};

struct SonarSceneSpec {
    int width = 256;
    int height = 256;
    double speckle_scale = 0.5;     // std of the unit-mean multiplicative speckle
    double seabed_smoothness = 6.0; // low-pass length of the seabed field
    std::vector<ObjectSpec> objects;
    std::uint64_t rng_seed = 0;

    /// Throws Error(invalid_argument) naming the violated invariant.
    void validate() const;
};

struct RenderedScene {
    Image image; // 1 x H x W, values in [0,1]
    std::vector<Annotation> annotations;
};

/// Bounding box of highlight plus shadow, as annotated.
Box object_bounding_box(const ObjectSpec& object);

RenderedScene render_scene(const SonarSceneSpec& spec);

/// Per-pixel region masks (highlight / shadow) for the objects of a spec, used
/// by diagnostics and tests. Values: 0 seabed, 1 highlight, 2 shadow.
std::vector<std::uint8_t> region_mask(const SonarSceneSpec& spec);

/// Draws an object of the given class with class-typical parameters.
ObjectSpec sample_object(Label label, double center_row, double center_col, std::uint64_t seed);

/// Scene with `n_objects` non-overlapping objects of random class.
SonarSceneSpec random_scene_spec(int width, int height, int n_objects, std::uint64_t seed);

/// Exactly `n_per_class` patches for each of BG, MILCO, NOMBO (in that order),
/// single-channel, subset `synthetic`. Object patches contain the object center;
/// BG patches overlap no object box.
std::vector<LabeledPatch> generate_labeled_patches(int n_per_class, std::uint64_t seed,
                                                   int patch_size = kPatchSize);

} // namespace sonarssl
