#include "patches.hpp"

#include "common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace sonarssl {

std::int64_t grid_patch_count(int height, int width, int window, int stride) {
    require_arg(window > 0 && stride > 0, "window and stride must be positive");
    if (height < window || width < window) return 0;
    return static_cast<std::int64_t>((height - window) / stride + 1) * ((width - window) / stride + 1);
}

std::vector<PatchTensor> extract_grid_patches(const Image& image, const std::string& source_id, Subset subset,
                                              int window, int stride) {
    require_arg(window > 0 && stride > 0, "window and stride must be positive");
    require_arg(image.height >= window && image.width >= window,
                source_id + ": image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                    " is smaller than the " + std::to_string(window) + " px window");
    std::vector<PatchTensor> out;
    out.reserve(static_cast<std::size_t>(grid_patch_count(image.height, image.width, window, stride)));
    for (int r = 0; r + window <= image.height; r += stride) {
        for (int c = 0; c + window <= image.width; c += stride) {
            out.push_back(PatchTensor{image.crop(r, c, window, window), source_id, r, c, subset});
        }
    }
    return out;
}

std::vector<std::pair<int, int>> sample_background_windows(int height, int width, std::span<const Box> boxes,
                                                           int window, int count, std::uint64_t seed,
                                                           int retry_budget) {
    require_arg(height >= window && width >= window, "image smaller than window");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> row(0, height - window);
    std::uniform_int_distribution<int> col(0, width - window);
    std::vector<std::pair<int, int>> out;
    int rejected = 0;
    while (static_cast<int>(out.size()) < count) {
        const int r = row(rng), c = col(rng);
        const Box candidate{r, c, r + window, c + window};
        const bool clear =
            std::none_of(boxes.begin(), boxes.end(), [&](const Box& b) { return candidate.intersects(b); });
        if (clear) {
            out.emplace_back(r, c);
        } else if (++rejected > retry_budget) {
            throw Error(ErrorCode::invalid_argument,
                        "background sampling failed: no object-free " + std::to_string(window) + " px window found after " +
                            std::to_string(retry_budget) + " draws");
        }
    }
    return out;
}

std::pair<int, int> centered_window(const Box& box, int height, int width, int window) {
    const int cr = (box.row0 + box.row1) / 2;
    const int cc = (box.col0 + box.col1) / 2;
    return {std::clamp(cr - window / 2, 0, height - window), std::clamp(cc - window / 2, 0, width - window)};
}

std::vector<LabeledPatch> extract_labeled_patches(const Image& image, std::span<const Annotation> annotations,
                                                  const std::string& source_id, Subset subset, int bg_per_image,
                                                  std::uint64_t seed, int window) {
    require_arg(image.height >= window && image.width >= window, source_id + ": image smaller than window");
    require_arg(bg_per_image >= 0, "bg_per_image must be >= 0");
    std::vector<LabeledPatch> out;
    std::vector<Box> boxes;
    for (const auto& a : annotations) {
        require_arg(a.label != Label::bg, source_id + ": annotations must be MILCO or NOMBO");
        const Box clipped{std::max(a.box.row0, 0), std::max(a.box.col0, 0), std::min(a.box.row1, image.height),
                          std::min(a.box.col1, image.width)};
        require_arg(!a.box.empty() && !clipped.empty(), source_id + ": annotation box lies outside the image");
        const auto [r, c] = centered_window(clipped, image.height, image.width, window);
        out.push_back(LabeledPatch{PatchTensor{image.crop(r, c, window, window), source_id, r, c, subset}, a.label});
        boxes.push_back(clipped);
    }
    if (!annotations.empty() && bg_per_image > 0) {
        for (const auto& [r, c] : sample_background_windows(image.height, image.width, boxes, window, bg_per_image,
                                                            derive_seed({seed, fnv1a64(source_id)}))) {
            out.push_back(LabeledPatch{PatchTensor{image.crop(r, c, window, window), source_id, r, c, subset}, Label::bg});
        }
    }
    return out;
}

void SplitSpec::validate() const {
    for (double f : {train, val, test}) {
        require_arg(f > 0.0 && f < 1.0, "split fractions must lie in (0,1)");
    }
    require_arg(std::abs(train + val + test - 1.0) <= 1e-9,
                "split fractions must sum to 1 (got " + std::to_string(train + val + test) + ")");
}

std::vector<std::string> SplitSpec::required_strata() const {
    if (stratify_by == StratifyBy::annotation_presence) return {"annotated", "unannotated"};
    return {"BG", "MILCO", "NOMBO"};
}

std::vector<Split> make_splits(std::span<const std::string> strata, const SplitSpec& spec) {
    spec.validate();
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < strata.size(); ++i) groups[strata[i]].push_back(i);
    for (const auto& name : spec.required_strata()) {
        require_arg(groups.count(name) != 0, "stratum '" + name + "' is empty");
    }
    std::vector<Split> out(strata.size(), Split::train);
    for (auto& [name, idx] : groups) {
        std::mt19937_64 rng(derive_seed({spec.seed, fnv1a64(name)}));
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n = static_cast<double>(idx.size());
        const auto n_train = static_cast<std::size_t>(std::lround(spec.train * n));
        const auto n_val = std::min(idx.size() - n_train, static_cast<std::size_t>(std::lround(spec.val * n)));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            out[idx[k]] = k < n_train ? Split::train : (k < n_train + n_val ? Split::val : Split::test);
        }
    }
    return out;
}

ChannelStats compute_channel_stats(std::span<const Image* const> patches) {
    require_arg(!patches.empty(), "cannot compute statistics of an empty subset");
    const int channels = patches.front()->channels;
    for (const Image* img : patches) {
        require_arg(img->channels == channels, "mixed channel counts within one subset");
    }
    ChannelStats st;
    for (int c = 0; c < channels; ++c) {
        double sum = 0.0;
        std::size_t count = 0;
        for (const Image* img : patches) {
            for (float v : img->plane(c)) sum += v;
            count += img->plane_size();
        }
        const double mean = sum / static_cast<double>(count);
        double sq = 0.0;
        for (const Image* img : patches) {
            for (float v : img->plane(c)) sq += (v - mean) * (v - mean);
        }
        st.mean.push_back(mean);
        st.std.push_back(std::max(std::sqrt(sq / static_cast<double>(count)), kStdFloor));
    }
    return st;
}

std::map<Subset, ChannelStats> compute_subset_stats(const std::map<Subset, std::vector<const Image*>>& groups) {
    require_arg(!groups.empty(), "no subsets given");
    std::map<Subset, ChannelStats> out;
    for (const auto& [subset, patches] : groups) {
        require_arg(!patches.empty(), "subset '" + std::string(to_string(subset)) + "' is empty");
        out[subset] = compute_channel_stats(patches);
    }
    return out;
}

void normalize_in_place(Image& image, const ChannelStats& stats) {
    const int sc = static_cast<int>(stats.mean.size());
    require_arg(sc == 1 || sc == image.channels,
                "stats have " + std::to_string(sc) + " channels, image has " + std::to_string(image.channels));
    for (int c = 0; c < image.channels; ++c) {
        const int k = sc == 1 ? 0 : c;
        const float mean = static_cast<float>(stats.mean[k]);
        const float inv = static_cast<float>(1.0 / stats.std[k]);
        for (float& v : image.plane(c)) v = (v - mean) * inv;
    }
}

} // namespace sonarssl
