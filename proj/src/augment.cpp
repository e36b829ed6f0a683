#include "augment.hpp"

#include "common.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace sonarssl {

using nlohmann::json;

namespace {

constexpr float kLumaR = 0.299f, kLumaG = 0.587f, kLumaB = 0.114f;

double reflect_coord(double q, double n) {
    // Reflect about the outer pixel edges -0.5 and n-0.5.
    const double period = 2.0 * n;
    double t = std::fmod(q + 0.5, period);
    if (t < 0) t += period;
    return (t < n ? t : period - t) - 0.5;
}

float bilinear(std::span<const float> plane, int h, int w, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const int y1 = std::min(y0 + 1, h - 1);
    const int x1 = std::min(x0 + 1, w - 1);
    const float fy = static_cast<float>(y - y0);
    const float fx = static_cast<float>(x - x0);
    const float a = plane[y0 * w + x0], b = plane[y0 * w + x1];
    const float c = plane[y1 * w + x0], d = plane[y1 * w + x1];
    if (fx == 0.0f && fy == 0.0f) return a;
    const float top = a + (b - a) * fx;
    const float bot = c + (d - c) * fx;
    return top + (bot - top) * fy;
}

void clamp01(Image& img) {
    for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

void gaussian_blur(Image& img, int kernel, double sigma) {
    const int radius = kernel / 2;
    std::vector<float> k(kernel);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * i * i / (sigma * sigma));
        k[i + radius] = static_cast<float>(v);
        sum += v;
    }
    for (float& v : k) v = static_cast<float>(v / sum);
    auto reflect = [](int i, int n) {
        while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
        return i;
    };
    const int h = img.height, w = img.width;
    std::vector<float> tmp(img.plane_size());
    for (int c = 0; c < img.channels; ++c) {
        auto plane = img.plane(c);
        for (int r = 0; r < h; ++r) {
            for (int x = 0; x < w; ++x) {
                float acc = 0.0f;
                for (int j = -radius; j <= radius; ++j) acc += k[j + radius] * plane[r * w + reflect(x + j, w)];
                tmp[r * w + x] = acc;
            }
        }
        for (int r = 0; r < h; ++r) {
            for (int x = 0; x < w; ++x) {
                float acc = 0.0f;
                for (int j = -radius; j <= radius; ++j) acc += k[j + radius] * tmp[reflect(r + j, h) * w + x];
                plane[r * w + x] = acc;
            }
        }
    }
}

void check_range(double v, double lo, double hi, const char* name) {
    require_arg(std::isfinite(v) && v >= lo && v <= hi,
                std::string("augmentation ") + name + " must lie in [" + std::to_string(lo) + ", " +
                    std::to_string(hi) + "]");
}

} // namespace

std::string_view to_string(AugPreset preset) {
    switch (preset) {
    case AugPreset::sss_adapted: return "sss_adapted";
    case AugPreset::natural_image: return "natural_image";
    case AugPreset::custom: return "custom";
    }
    return "?";
}

AugPreset parse_aug_preset(std::string_view name) {
    if (name == "sss_adapted") return AugPreset::sss_adapted;
    if (name == "natural_image") return AugPreset::natural_image;
    if (name == "custom") return AugPreset::custom;
    throw Error(ErrorCode::invalid_argument, "unknown augmentation preset '" + std::string(name) + "'");
}

AugmentPolicy AugmentPolicy::from_preset(AugPreset preset, int n_views) {
    AugmentPolicy p;
    p.preset = preset;
    p.n_views = n_views;
    if (preset == AugPreset::natural_image) {
        p.vflip = false;
        p.rotation_deg = 0.0;
        p.saturation = 0.4;
        p.hue = 0.1;
        p.solarize_prob = 0.2;
        p.grayscale_prob = 0.2;
    }
    p.validate();
    return p;
}

AugmentPolicy AugmentPolicy::identity(int n_views) {
    AugmentPolicy p;
    p.preset = AugPreset::custom;
    p.n_views = n_views;
    p.crop_scale_lo = p.crop_scale_hi = 1.0;
    p.aspect_lo = p.aspect_hi = 1.0;
    p.hflip = p.vflip = false;
    p.rotation_deg = 0.0;
    p.jitter_prob = 0.0;
    p.brightness = p.contrast = p.saturation = p.hue = 0.0;
    p.blur_prob = 0.0;
    p.solarize_prob = p.grayscale_prob = 0.0;
    p.validate();
    return p;
}

void AugmentPolicy::validate() const {
    require_arg(n_views >= 2, "augmentation needs at least 2 views");
    require_arg(crop_scale_lo > 0.0 && crop_scale_lo <= crop_scale_hi && crop_scale_hi <= 1.0,
                "crop scale must satisfy 0 < lo <= hi <= 1");
    require_arg(aspect_lo > 0.0 && aspect_lo <= aspect_hi, "aspect range must satisfy 0 < lo <= hi");
    check_range(rotation_deg, 0.0, 180.0, "rotation_deg");
    check_range(jitter_prob, 0.0, 1.0, "jitter_prob");
    check_range(brightness, 0.0, 1.0, "brightness");
    check_range(contrast, 0.0, 1.0, "contrast");
    check_range(saturation, 0.0, 1.0, "saturation");
    check_range(hue, 0.0, 0.5, "hue");
    check_range(blur_prob, 0.0, 1.0, "blur_prob");
    check_range(solarize_prob, 0.0, 1.0, "solarize_prob");
    check_range(grayscale_prob, 0.0, 1.0, "grayscale_prob");
    require_arg(blur_kernel >= 1 && blur_kernel % 2 == 1, "blur kernel must be odd and positive");
    require_arg(blur_prob == 0.0 || (blur_sigma_lo > 0.0 && blur_sigma_lo <= blur_sigma_hi),
                "blur sigma range must satisfy 0 < lo <= hi");
    if (preset == AugPreset::sss_adapted) {
        require_arg(saturation == 0.0 && hue == 0.0, "sss_adapted preset forbids saturation/hue jitter");
        require_arg(solarize_prob == 0.0 && grayscale_prob == 0.0,
                    "sss_adapted preset forbids solarization and grayscale conversion");
        require_arg(vflip && rotation_deg == 15.0, "sss_adapted preset requires vertical flip and 15 degree rotation");
    } else if (preset == AugPreset::natural_image) {
        require_arg(saturation > 0.0 && hue > 0.0, "natural_image preset requires saturation/hue jitter");
        require_arg(solarize_prob > 0.0 && grayscale_prob > 0.0,
                    "natural_image preset requires solarization and grayscale conversion");
        require_arg(!vflip && rotation_deg == 0.0, "natural_image preset has no vertical flip or rotation");
    }
}

json AugmentPolicy::to_json() const {
    return json{{"preset", std::string(to_string(preset))},
                {"n_views", n_views},
                {"crop_scale", {crop_scale_lo, crop_scale_hi}},
                {"aspect", {aspect_lo, aspect_hi}},
                {"hflip", hflip},
                {"vflip", vflip},
                {"rotation_deg", rotation_deg},
                {"jitter_prob", jitter_prob},
                {"brightness", brightness},
                {"contrast", contrast},
                {"saturation", saturation},
                {"hue", hue},
                {"blur_prob", blur_prob},
                {"blur_kernel", blur_kernel},
                {"blur_sigma", {blur_sigma_lo, blur_sigma_hi}},
                {"solarize_prob", solarize_prob},
                {"grayscale_prob", grayscale_prob}};
}

AugmentPolicy AugmentPolicy::from_json(const json& j) {
    // Missing keys fall back to the named preset's values.
    const AugPreset preset = parse_aug_preset(j.value("preset", std::string("sss_adapted")));
    AugmentPolicy p = preset == AugPreset::custom ? AugmentPolicy{} : from_preset(preset);
    p.preset = preset;
    p.n_views = j.value("n_views", p.n_views);
    if (j.contains("crop_scale")) {
        p.crop_scale_lo = j.at("crop_scale").at(0).get<double>();
        p.crop_scale_hi = j.at("crop_scale").at(1).get<double>();
    }
    if (j.contains("aspect")) {
        p.aspect_lo = j.at("aspect").at(0).get<double>();
        p.aspect_hi = j.at("aspect").at(1).get<double>();
    }
    p.hflip = j.value("hflip", p.hflip);
    p.vflip = j.value("vflip", p.vflip);
    p.rotation_deg = j.value("rotation_deg", p.rotation_deg);
    p.jitter_prob = j.value("jitter_prob", p.jitter_prob);
    p.brightness = j.value("brightness", p.brightness);
    p.contrast = j.value("contrast", p.contrast);
    p.saturation = j.value("saturation", p.saturation);
    p.hue = j.value("hue", p.hue);
    p.blur_prob = j.value("blur_prob", p.blur_prob);
    p.blur_kernel = j.value("blur_kernel", p.blur_kernel);
    if (j.contains("blur_sigma")) {
        p.blur_sigma_lo = j.at("blur_sigma").at(0).get<double>();
        p.blur_sigma_hi = j.at("blur_sigma").at(1).get<double>();
    }
    p.solarize_prob = j.value("solarize_prob", p.solarize_prob);
    p.grayscale_prob = j.value("grayscale_prob", p.grayscale_prob);
    p.validate();
    return p;
}

std::uint64_t view_stream_seed(std::uint64_t run_seed, std::uint64_t epoch, std::uint64_t patch_index) {
    return derive_seed({run_seed, 0xa06ULL, epoch, patch_index});
}

ViewParams sample_view_params(const AugmentPolicy& policy, std::uint64_t view_seed) {
    std::mt19937_64 rng(view_seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
    constexpr double n = kPatchSize;

    ViewParams p;
    bool placed = false;
    for (int attempt = 0; attempt < 10 && !placed; ++attempt) {
        const double scale = uni(policy.crop_scale_lo, policy.crop_scale_hi);
        const double ratio = std::exp(uni(std::log(policy.aspect_lo), std::log(policy.aspect_hi)));
        const double w = n * std::sqrt(scale * ratio);
        const double h = n * std::sqrt(scale / ratio);
        if (w <= n && h <= n) {
            p.crop_h = h;
            p.crop_w = w;
            p.crop_row = uni(0.0, n - h);
            p.crop_col = uni(0.0, n - w);
            placed = true;
        }
    }
    if (!placed) {
        p.crop_h = p.crop_w = n * std::sqrt(policy.crop_scale_hi);
        p.crop_row = p.crop_col = (n - p.crop_h) / 2.0;
    }
    p.hflip = policy.hflip && u01(rng) < 0.5;
    p.vflip = policy.vflip && u01(rng) < 0.5;
    p.angle_rad = uni(-policy.rotation_deg, policy.rotation_deg) * std::numbers::pi / 180.0;
    p.jitter = u01(rng) < policy.jitter_prob;
    if (p.jitter) {
        p.brightness = uni(1.0 - policy.brightness, 1.0 + policy.brightness);
        p.contrast = uni(1.0 - policy.contrast, 1.0 + policy.contrast);
        p.saturation = uni(1.0 - policy.saturation, 1.0 + policy.saturation);
        p.hue = uni(-policy.hue, policy.hue);
    }
    p.grayscale = u01(rng) < policy.grayscale_prob;
    p.solarize = u01(rng) < policy.solarize_prob;
    if (u01(rng) < policy.blur_prob) p.blur_sigma = uni(policy.blur_sigma_lo, policy.blur_sigma_hi);
    return p;
}

Image apply_view(const Image& patch, const ChannelStats& stats, const AugmentPolicy& policy, const ViewParams& p) {
    require_arg(patch.height == kPatchSize && patch.width == kPatchSize, "augmentation expects 96x96 patches");
    require_arg(patch.channels == 1 || patch.channels == 3, "augmentation expects 1 or 3 channels");
    constexpr int n = kPatchSize;
    constexpr double center = (n - 1) / 2.0;

    // Geometry: output pixel -> rotated frame -> flipped frame -> crop -> source.
    Image out(3, n, n);
    const double ca = std::cos(p.angle_rad), sa = std::sin(p.angle_rad);
    const double sy = p.crop_h / n, sx = p.crop_w / n;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const double dy = y - center, dx = x - center;
            double qy = reflect_coord(ca * dy + sa * dx + center, n);
            double qx = reflect_coord(-sa * dy + ca * dx + center, n);
            if (p.vflip) qy = (n - 1) - qy;
            if (p.hflip) qx = (n - 1) - qx;
            const double src_y = p.crop_row + (qy + 0.5) * sy - 0.5;
            const double src_x = p.crop_col + (qx + 0.5) * sx - 0.5;
            for (int c = 0; c < 3; ++c) {
                const int sc = patch.channels == 1 ? 0 : c;
                out.at(c, y, x) = bilinear(patch.plane(sc), n, n, src_y, src_x);
            }
        }
    }

    const std::size_t plane = out.plane_size();
    float* r = out.plane(0).data();
    float* g = out.plane(1).data();
    float* b = out.plane(2).data();

    if (p.jitter) {
        if (p.brightness != 1.0) {
            for (float& v : out.data) v *= static_cast<float>(p.brightness);
            clamp01(out);
        }
        if (p.contrast != 1.0) {
            double mean = 0.0;
            for (std::size_t i = 0; i < plane; ++i) mean += kLumaR * r[i] + kLumaG * g[i] + kLumaB * b[i];
            const auto m = static_cast<float>(mean / static_cast<double>(plane));
            for (float& v : out.data) v = (v - m) * static_cast<float>(p.contrast) + m;
            clamp01(out);
        }
        if (p.saturation != 1.0) {
            const auto s = static_cast<float>(p.saturation);
            for (std::size_t i = 0; i < plane; ++i) {
                const float gray = kLumaR * r[i] + kLumaG * g[i] + kLumaB * b[i];
                r[i] = gray + (r[i] - gray) * s;
                g[i] = gray + (g[i] - gray) * s;
                b[i] = gray + (b[i] - gray) * s;
            }
            clamp01(out);
        }
        if (p.hue != 0.0) {
            // Rotation of the chroma plane in YIQ space.
            const double th = 2.0 * std::numbers::pi * p.hue;
            const auto ch = static_cast<float>(std::cos(th)), sh = static_cast<float>(std::sin(th));
            for (std::size_t i = 0; i < plane; ++i) {
                const float yy = 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i];
                const float ii = 0.596f * r[i] - 0.274f * g[i] - 0.322f * b[i];
                const float qq = 0.211f * r[i] - 0.523f * g[i] + 0.312f * b[i];
                const float i2 = ch * ii - sh * qq;
                const float q2 = sh * ii + ch * qq;
                r[i] = yy + 0.956f * i2 + 0.621f * q2;
                g[i] = yy - 0.272f * i2 - 0.647f * q2;
                b[i] = yy - 1.106f * i2 + 1.703f * q2;
            }
            clamp01(out);
        }
    }
    if (p.grayscale) {
        for (std::size_t i = 0; i < plane; ++i) {
            const float gray = kLumaR * r[i] + kLumaG * g[i] + kLumaB * b[i];
            r[i] = g[i] = b[i] = gray;
        }
    }
    if (p.solarize) {
        for (float& v : out.data) {
            if (v >= 0.5f) v = 1.0f - v;
        }
    }
    if (p.blur_sigma > 0.0) gaussian_blur(out, policy.blur_kernel, p.blur_sigma);
    normalize_in_place(out, stats);
    return out;
}

std::vector<Image> make_views(const Image& patch, const ChannelStats& stats, const AugmentPolicy& policy,
                              std::uint64_t stream_seed) {
    std::vector<Image> views;
    views.reserve(policy.n_views);
    for (int v = 0; v < policy.n_views; ++v) {
        const ViewParams p = sample_view_params(policy, derive_seed({stream_seed, static_cast<std::uint64_t>(v)}));
        views.push_back(apply_view(patch, stats, policy, p));
    }
    return views;
}

Image prepare_eval_input(const Image& patch, const ChannelStats& stats) {
    require_arg(patch.channels == 1 || patch.channels == 3, "expected 1 or 3 channels");
    Image out(3, patch.height, patch.width);
    for (int c = 0; c < 3; ++c) {
        auto src = patch.plane(patch.channels == 1 ? 0 : c);
        std::copy(src.begin(), src.end(), out.plane(c).begin());
    }
    normalize_in_place(out, stats);
    return out;
}

} // namespace sonarssl
