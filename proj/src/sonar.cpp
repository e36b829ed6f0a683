#include "sonar.hpp"

#include "common.hpp"
#include "patches.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace sonarssl {

namespace {

constexpr double kSeabedBase = 0.28;
constexpr double kSeabedVariation = 0.25;
constexpr double kRangeFalloff = 0.2;
constexpr double kShadowAttenuation = 0.12;
constexpr int kHarmonics = 4; // boundary perturbation harmonics k = 2..5

// Radial boundary perturbation and interior texture for one object, drawn from
// the object's own stream so that scenes are order-independent.
struct ObjectShape {
    const ObjectSpec* spec = nullptr;
    std::array<double, kHarmonics> amp{};
    std::array<double, kHarmonics> phase{};
    std::array<double, 3> texture_freq{};
    std::array<double, 3> texture_phase{};
    double cos_o = 1.0;
    double sin_o = 0.0;

    ObjectShape(const ObjectSpec& s, std::uint64_t seed) : spec(&s) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        for (int k = 0; k < kHarmonics; ++k) {
            amp[k] = 0.12 + 0.16 * u01(rng);
            phase[k] = 2.0 * std::numbers::pi * u01(rng);
        }
        for (int k = 0; k < 3; ++k) {
            texture_freq[k] = 0.6 + 0.8 * u01(rng);
            texture_phase[k] = 2.0 * std::numbers::pi * u01(rng);
        }
        cos_o = std::cos(s.orientation);
        sin_o = std::sin(s.orientation);
    }

    double max_radius_scale() const {
        double s = 1.0;
        for (double a : amp) s += spec->irregularity * a;
        return s;
    }

    // Object-frame normalized coordinates of pixel (r, c).
    void local(double r, double c, double& u, double& v) const {
        const double dr = r - spec->center_row;
        const double dc = c - spec->center_col;
        u = (cos_o * dr + sin_o * dc) / spec->highlight_axes[0];
        v = (-sin_o * dr + cos_o * dc) / spec->highlight_axes[1];
    }

    bool inside(double r, double c) const {
        double u, v;
        local(r, c, u, v);
        const double rho = std::sqrt(u * u + v * v);
        if (rho > max_radius_scale()) return false;
        const double theta = std::atan2(v, u);
        double bound = 1.0;
        for (int k = 0; k < kHarmonics; ++k) {
            bound += spec->irregularity * amp[k] * std::cos((k + 2) * theta + phase[k]);
        }
        return rho <= std::max(bound, 0.25);
    }

    // Interior reflectivity multiplier; irregular objects get mottled returns.
    double texture(double r, double c) const {
        double u, v;
        local(r, c, u, v);
        double t = 0.0;
        for (int k = 0; k < 3; ++k) {
            t += std::sin(texture_freq[k] * 3.0 * (k == 1 ? v : u + v) + texture_phase[k]);
        }
        return 1.0 - 0.45 * spec->irregularity * (0.5 + t / 6.0);
    }
};

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& x : k) x /= sum;
    return k;
}

int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        i = i < 0 ? -i - 1 : 2 * n - i - 1;
    }
    return i;
}

std::vector<double> smooth_field(int h, int w, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> field(static_cast<std::size_t>(h) * w);
    for (double& x : field) x = normal(rng);
    const auto k = gaussian_kernel(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    std::vector<double> tmp(field.size());
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int j = -radius; j <= radius; ++j) acc += k[j + radius] * field[r * w + reflect_index(c + j, w)];
            tmp[r * w + c] = acc;
        }
    }
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int j = -radius; j <= radius; ++j) acc += k[j + radius] * tmp[reflect_index(r + j, h) * w + c];
            field[r * w + c] = acc;
        }
    }
    double mean = 0.0, sq = 0.0;
    for (double x : field) mean += x;
    mean /= static_cast<double>(field.size());
    for (double x : field) sq += (x - mean) * (x - mean);
    const double sd = std::sqrt(sq / static_cast<double>(field.size()));
    for (double& x : field) x = sd > 0 ? (x - mean) / sd : 0.0;
    return field;
}

Box highlight_box(const ObjectSpec& o) {
    const double scale = 1.0 + o.irregularity * kHarmonics * 0.28;
    const double a = o.highlight_axes[0] * scale;
    const double b = o.highlight_axes[1] * scale;
    const double co = std::cos(o.orientation), so = std::sin(o.orientation);
    const double half_r = std::sqrt(a * a * co * co + b * b * so * so);
    const double half_c = std::sqrt(a * a * so * so + b * b * co * co);
    return Box{static_cast<int>(std::floor(o.center_row - half_r)),
               static_cast<int>(std::floor(o.center_col - half_c)),
               static_cast<int>(std::ceil(o.center_row + half_r)) + 1,
               static_cast<int>(std::ceil(o.center_col + half_c)) + 1};
}

std::uint64_t object_seed(const SonarSceneSpec& spec, std::size_t index) {
    return derive_seed({spec.rng_seed, 0x0b1ec7ULL, index});
}

// 0 seabed, 1 highlight, 2 shadow; fills `owner` with the object index.
void build_regions(const SonarSceneSpec& spec, const std::vector<ObjectShape>& shapes,
                   std::vector<std::uint8_t>& region, std::vector<int>& owner) {
    const int h = spec.height, w = spec.width;
    region.assign(static_cast<std::size_t>(h) * w, 0);
    owner.assign(region.size(), -1);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const Box hb = highlight_box(*shapes[i].spec);
        for (int r = std::max(0, hb.row0); r < std::min(h, hb.row1); ++r) {
            for (int c = std::max(0, hb.col0); c < std::min(w, hb.col1); ++c) {
                if (shapes[i].inside(r, c)) {
                    region[r * w + c] = 1;
                    owner[r * w + c] = static_cast<int>(i);
                }
            }
        }
    }
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const ObjectSpec& o = *shapes[i].spec;
        if (o.shadow_length <= 0.0) continue;
        const Box box = object_bounding_box(o);
        const int steps = static_cast<int>(std::ceil(o.shadow_length * 2.0));
        for (int r = std::max(0, box.row0); r < std::min(h, box.row1); ++r) {
            for (int c = std::max(0, box.col0); c < std::min(w, box.col1); ++c) {
                const std::size_t idx = static_cast<std::size_t>(r) * w + c;
                if (region[idx] != 0) continue;
                for (int s = 1; s <= steps; ++s) {
                    const double back = 0.5 * s;
                    if (shapes[i].inside(r - back * o.shadow_direction[0], c - back * o.shadow_direction[1])) {
                        region[idx] = 2;
                        owner[idx] = static_cast<int>(i);
                        break;
                    }
                }
            }
        }
    }
}

} // namespace

void SonarSceneSpec::validate() const {
    require_arg(width >= kPatchSize && height >= kPatchSize,
                "scene must be at least 96x96, got " + std::to_string(height) + "x" + std::to_string(width));
    require_arg(speckle_scale > 0.0 && std::isfinite(speckle_scale), "speckle_scale must be > 0");
    require_arg(seabed_smoothness > 0.0 && std::isfinite(seabed_smoothness), "seabed_smoothness must be > 0");
    for (std::size_t i = 0; i < objects.size(); ++i) {
        const ObjectSpec& o = objects[i];
        const std::string tag = "object " + std::to_string(i) + ": ";
        require_arg(o.label == Label::milco || o.label == Label::nombo, tag + "label must be MILCO or NOMBO");
        require_arg(o.highlight_axes[0] > 0 && o.highlight_axes[1] > 0, tag + "highlight axes must be positive");
        require_arg(o.highlight_gain > 1.0, tag + "highlight_gain must exceed 1");
        require_arg(o.shadow_length >= 0.0, tag + "shadow_length must be >= 0");
        const double n = std::hypot(o.shadow_direction[0], o.shadow_direction[1]);
        require_arg(std::abs(n - 1.0) < 1e-6, tag + "shadow_direction must be a unit vector");
        require_arg(o.irregularity >= 0.0 && o.irregularity <= 1.0, tag + "irregularity must lie in [0,1]");
        if (o.label == Label::milco) {
            require_arg(o.irregularity <= 0.3, tag + "MILCO irregularity must be <= 0.3");
            require_arg(o.shadow_length > 0.0, tag + "MILCO must cast a shadow");
        } else {
            require_arg(o.irregularity >= 0.5, tag + "NOMBO irregularity must be >= 0.5");
        }
        const Box b = object_bounding_box(o);
        require_arg(b.row0 >= 0 && b.col0 >= 0 && b.row1 <= height && b.col1 <= width,
                    tag + "bounding box lies outside the canvas");
    }
}

Box object_bounding_box(const ObjectSpec& o) {
    Box b = highlight_box(o);
    if (o.shadow_length > 0.0) {
        const int dr = static_cast<int>(std::lround(o.shadow_length * o.shadow_direction[0]));
        const int dc = static_cast<int>(std::lround(o.shadow_length * o.shadow_direction[1]));
        b = Box{std::min(b.row0, b.row0 + dr) - 1, std::min(b.col0, b.col0 + dc) - 1,
                std::max(b.row1, b.row1 + dr) + 1, std::max(b.col1, b.col1 + dc) + 1};
    }
    return b;
}

std::vector<std::uint8_t> region_mask(const SonarSceneSpec& spec) {
    spec.validate();
    std::vector<ObjectShape> shapes;
    for (std::size_t i = 0; i < spec.objects.size(); ++i) shapes.emplace_back(spec.objects[i], object_seed(spec, i));
    std::vector<std::uint8_t> region;
    std::vector<int> owner;
    build_regions(spec, shapes, region, owner);
    return region;
}

RenderedScene render_scene(const SonarSceneSpec& spec) {
    spec.validate();
    const int h = spec.height, w = spec.width;
    std::mt19937_64 rng(derive_seed({spec.rng_seed, 0x5eabedULL}));
    const auto field = smooth_field(h, w, spec.seabed_smoothness, rng);

    std::vector<ObjectShape> shapes;
    for (std::size_t i = 0; i < spec.objects.size(); ++i) shapes.emplace_back(spec.objects[i], object_seed(spec, i));
    std::vector<std::uint8_t> region;
    std::vector<int> owner;
    build_regions(spec, shapes, region, owner);

    // Unit-mean gamma speckle with the requested standard deviation.
    const double looks = 1.0 / (spec.speckle_scale * spec.speckle_scale);
    std::gamma_distribution<double> speckle(looks, 1.0 / looks);
    std::mt19937_64 noise_rng(derive_seed({spec.rng_seed, 0x5bec1eULL}));

    RenderedScene out{Image(1, h, w), {}};
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const std::size_t idx = static_cast<std::size_t>(r) * w + c;
            double refl = kSeabedBase * (1.0 + kSeabedVariation * field[idx]) *
                          (1.0 - kRangeFalloff * static_cast<double>(c) / w);
            refl = std::max(refl, 0.02);
            if (region[idx] == 1) {
                const ObjectShape& s = shapes[owner[idx]];
                refl *= s.spec->highlight_gain * s.texture(r, c);
            } else if (region[idx] == 2) {
                refl *= kShadowAttenuation;
            }
            const double value = refl * speckle(noise_rng);
            out.image.data[idx] = static_cast<float>(std::clamp(value, 0.0, 1.0));
        }
    }
    for (const auto& o : spec.objects) {
        out.annotations.push_back(Annotation{o.label, object_bounding_box(o)});
    }
    return out;
}

ObjectSpec sample_object(Label label, double center_row, double center_col, std::uint64_t seed) {
    require_arg(label != Label::bg, "cannot sample a background object");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

    ObjectSpec o;
    o.label = label;
    o.center_row = center_row;
    o.center_col = center_col;
    o.orientation = uni(-std::numbers::pi, std::numbers::pi);
    // Shadows fall away from the sensor track, i.e. roughly along +/- range.
    const double side = u01(rng) < 0.5 ? -1.0 : 1.0;
    const double tilt = uni(-0.25, 0.25);
    o.shadow_direction = {std::sin(tilt), side * std::cos(tilt)};
    if (label == Label::milco) {
        o.highlight_axes = {uni(4.0, 7.0), uni(8.0, 14.0)};
        o.highlight_gain = uni(2.2, 3.5);
        o.shadow_length = uni(14.0, 30.0);
        o.irregularity = uni(0.0, 0.2);
    } else {
        o.highlight_axes = {uni(4.0, 11.0), uni(4.0, 11.0)};
        o.highlight_gain = uni(1.6, 3.0);
        o.shadow_length = u01(rng) < 0.4 ? 0.0 : uni(4.0, 14.0);
        o.irregularity = uni(0.55, 1.0);
    }
    return o;
}

namespace {

SonarSceneSpec base_scene(int width, int height, std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed({seed, 0x5ce9eULL}));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    SonarSceneSpec spec;
    spec.width = width;
    spec.height = height;
    spec.speckle_scale = 0.35 + 0.25 * u01(rng);
    spec.seabed_smoothness = 3.0 + 7.0 * u01(rng);
    spec.rng_seed = seed;
    return spec;
}

} // namespace

SonarSceneSpec random_scene_spec(int width, int height, int n_objects, std::uint64_t seed) {
    SonarSceneSpec spec = base_scene(width, height, seed);
    std::mt19937_64 rng(derive_seed({seed, 0x91aceULL}));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<Box> taken;
    int attempts = 0;
    while (static_cast<int>(spec.objects.size()) < n_objects) {
        require_arg(++attempts <= 200 * std::max(1, n_objects),
                    "cannot place " + std::to_string(n_objects) + " objects in a " + std::to_string(height) +
                        "x" + std::to_string(width) + " scene");
        const Label label = u01(rng) < 0.5 ? Label::milco : Label::nombo;
        const double r = 40.0 + (height - 80.0) * u01(rng);
        const double c = 40.0 + (width - 80.0) * u01(rng);
        ObjectSpec o = sample_object(label, r, c, derive_seed({seed, 0x0b1ULL, static_cast<std::uint64_t>(attempts)}));
        const Box b = object_bounding_box(o);
        if (b.row0 < 0 || b.col0 < 0 || b.row1 > height || b.col1 > width) continue;
        Box padded{b.row0 - 8, b.col0 - 8, b.row1 + 8, b.col1 + 8};
        if (std::any_of(taken.begin(), taken.end(), [&](const Box& t) { return t.intersects(padded); })) continue;
        taken.push_back(b);
        spec.objects.push_back(o);
    }
    return spec;
}

std::vector<LabeledPatch> generate_labeled_patches(int n_per_class, std::uint64_t seed, int patch_size) {
    require_arg(n_per_class >= 1, "n_per_class must be >= 1");
    require_arg(patch_size == kPatchSize, "patch size must be 96");
    std::vector<LabeledPatch> out;
    out.reserve(static_cast<std::size_t>(n_per_class) * 3);

    constexpr int kObjectScene = 160;
    constexpr int kBackgroundScene = 192;
    constexpr int kJitter = 14;
    constexpr int kCropJitter = 4;

    for (Label label : {Label::bg, Label::milco, Label::nombo}) {
        for (int i = 0; i < n_per_class; ++i) {
            const std::uint64_t s = derive_seed({seed, static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(i)});
            std::mt19937_64 rng(s);
            std::uniform_int_distribution<int> jitter(-kJitter, kJitter);
            std::uniform_int_distribution<int> crop_jitter(-kCropJitter, kCropJitter);
            LabeledPatch lp;
            lp.label = label;
            lp.patch.subset = Subset::synthetic;
            lp.patch.source_id = "syn-" + hex64(s);
            if (label == Label::bg) {
                // Background scenes may hold one distractor object that the crop must avoid.
                SonarSceneSpec spec = base_scene(kBackgroundScene, kBackgroundScene, s);
                if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5) {
                    const Label other = (i % 2 == 0) ? Label::milco : Label::nombo;
                    const double r = (jitter(rng) < 0 ? 56.0 : kBackgroundScene - 56.0);
                    const double c = (jitter(rng) < 0 ? 56.0 : kBackgroundScene - 56.0);
                    ObjectSpec o = sample_object(other, r, c, derive_seed({s, 1}));
                    o.shadow_direction = {0.0, c < kBackgroundScene / 2.0 ? -1.0 : 1.0};
                    o.shadow_length = std::min(o.shadow_length, 18.0);
                    if (o.label == Label::milco) o.shadow_length = std::max(o.shadow_length, 8.0);
                    spec.objects.push_back(o);
                }
                const RenderedScene scene = render_scene(spec);
                std::vector<Box> boxes;
                for (const auto& a : scene.annotations) boxes.push_back(a.box);
                const auto windows = sample_background_windows(spec.height, spec.width, boxes, patch_size, 1,
                                                               derive_seed({s, 2}));
                lp.patch.row = windows.front().first;
                lp.patch.col = windows.front().second;
                lp.patch.pixels = scene.image.crop(lp.patch.row, lp.patch.col, patch_size, patch_size);
            } else {
                SonarSceneSpec spec = base_scene(kObjectScene, kObjectScene, s);
                const double cr = kObjectScene / 2.0 + jitter(rng) * 0.5;
                const double cc = kObjectScene / 2.0 + jitter(rng) * 0.5;
                spec.objects.push_back(sample_object(label, cr, cc, derive_seed({s, 3})));
                const RenderedScene scene = render_scene(spec);
                const int r0 = std::clamp(static_cast<int>(std::lround(cr)) - patch_size / 2 + crop_jitter(rng), 0,
                                          kObjectScene - patch_size);
                const int c0 = std::clamp(static_cast<int>(std::lround(cc)) - patch_size / 2 + crop_jitter(rng), 0,
                                          kObjectScene - patch_size);
                lp.patch.row = r0;
                lp.patch.col = c0;
                lp.patch.pixels = scene.image.crop(r0, c0, patch_size, patch_size);
            }
            out.push_back(std::move(lp));
        }
    }
    return out;
}

} // namespace sonarssl
