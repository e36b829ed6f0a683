#include "pipeline.hpp"

#include "common.hpp"
#include "sonar.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <json.hpp>
#include <png.h>

namespace sonarssl {

using nlohmann::json;
namespace fs = std::filesystem;

void write_annotations(const fs::path& path, const AnnotationIndex& index) {
    json images = json::array();
    for (const auto& [file, anns] : index) {
        json list = json::array();
        for (const auto& a : anns) {
            list.push_back({{"label", std::string(to_string(a.label))},
                            {"box", {a.box.row0, a.box.col0, a.box.row1, a.box.col1}}});
        }
        images.push_back({{"file", file}, {"annotations", list}});
    }
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
    out << json{{"images", images}}.dump(2) << "\n";
}

AnnotationIndex read_annotations(const fs::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::not_found, "cannot open annotations " + path.string());
    AnnotationIndex index;
    try {
        const json j = json::parse(in);
        for (const auto& img : j.at("images")) {
            auto& list = index[img.at("file").get<std::string>()];
            for (const auto& a : img.value("annotations", json::array())) {
                const auto b = a.at("box").get<std::vector<int>>();
                require(b.size() == 4, ErrorCode::format, "annotation box needs 4 integers");
                list.push_back({parse_label(a.at("label").get<std::string>()), Box{b[0], b[1], b[2], b[3]}});
                require(list.back().label != Label::bg, ErrorCode::format, "annotations must be MILCO or NOMBO");
            }
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::format, path.string() + ": " + e.what());
    }
    return index;
}

Image read_image(const fs::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext != ".png") return read_netpbm(path);
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    require(png_image_begin_read_from_file(&png, path.string().c_str()) != 0, ErrorCode::io,
            "cannot read " + path.string() + ": " + png.message);
    const int channels = (png.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
    png.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<unsigned char> raw(PNG_IMAGE_SIZE(png));
    const bool ok = png_image_finish_read(&png, nullptr, raw.data(), 0, nullptr) != 0;
    const std::string msg = png.message;
    png_image_free(&png);
    require(ok, ErrorCode::format, "cannot decode " + path.string() + ": " + msg);
    Image img(channels, static_cast<int>(png.height), static_cast<int>(png.width));
    std::size_t k = 0;
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            for (int ch = 0; ch < channels; ++ch) img.at(ch, r, c) = static_cast<float>(raw[k++]) / 255.0f;
        }
    }
    return img;
}

PatchDataset generate_synthetic_corpus(const SyntheticCorpusSpec& spec, const fs::path& out) {
    require_arg(spec.n_scenes >= 0 && spec.n_per_class >= 0, "counts must be nonnegative");
    require_arg(spec.n_scenes + spec.n_per_class > 0, "nothing to generate");
    fs::create_directories(out / "images");

    std::vector<PatchTensor> unlabeled;
    AnnotationIndex index;
    for (int i = 0; i < spec.n_scenes; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "scene_%04d.pgm", i);
        const auto scene_seed = derive_seed({spec.seed, 0x5ce7eULL, static_cast<std::uint64_t>(i)});
        const auto rendered = render_scene(random_scene_spec(spec.scene_width, spec.scene_height, i % 4, scene_seed));
        write_netpbm(out / "images" / name, rendered.image);
        index[name] = rendered.annotations;
        auto grid = extract_grid_patches(rendered.image, name, Subset::synthetic);
        for (auto& p : grid) unlabeled.push_back(std::move(p));
    }
    write_annotations(out / "annotations.json", index);

    std::vector<LabeledPatch> labeled;
    std::vector<Split> labeled_splits;
    if (spec.n_per_class > 0) {
        labeled = generate_labeled_patches(spec.n_per_class, derive_seed({spec.seed, 0x1abe1ULL}));
        std::vector<std::string> strata;
        for (const auto& lp : labeled) strata.emplace_back(to_string(lp.label));
        SplitSpec split;
        split.stratify_by = StratifyBy::class_label;
        split.seed = spec.seed;
        labeled_splits = make_splits(strata, split);
    }
    std::vector<Split> unlabeled_splits(unlabeled.size(), Split::train);
    auto ds = build_dataset(std::move(unlabeled), std::move(unlabeled_splits), std::move(labeled),
                            std::move(labeled_splits), spec.seed);
    ds.save(out / "dataset");
    return ds;
}

PatchDataset extract_dataset(const fs::path& images_dir, const AnnotationIndex& annotations, const ExtractionSpec& spec) {
    require(fs::is_directory(images_dir), ErrorCode::not_found, "image directory not found: " + images_dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(images_dir)) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".pnm" || ext == ".png")) {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    require_arg(!files.empty(), "no images found in " + images_dir.string());
    for (const auto& [name, unused] : annotations) {
        require(fs::exists(images_dir / name), ErrorCode::not_found, "annotated image missing: " + name);
    }

    std::vector<std::string> strata;
    for (const auto& f : files) {
        auto it = annotations.find(f.filename().string());
        strata.push_back(it != annotations.end() && !it->second.empty() ? "annotated" : "unannotated");
    }
    SplitSpec split = spec.split;
    split.stratify_by = StratifyBy::annotation_presence;
    const auto image_splits = make_splits(strata, split);

    std::vector<PatchTensor> unlabeled;
    std::vector<Split> unlabeled_splits;
    std::vector<LabeledPatch> labeled;
    std::vector<Split> labeled_splits;
    for (std::size_t i = 0; i < files.size(); ++i) {
        const auto name = files[i].filename().string();
        const Image image = read_image(files[i]);
        for (auto& p : extract_grid_patches(image, name, spec.subset, spec.window, spec.stride)) {
            unlabeled.push_back(std::move(p));
            unlabeled_splits.push_back(image_splits[i]);
        }
        auto it = annotations.find(name);
        if (it == annotations.end() || it->second.empty()) continue;
        for (auto& lp : extract_labeled_patches(image, it->second, name, spec.subset, spec.bg_per_image,
                                                derive_seed({split.seed, fnv1a64(name)}), spec.window)) {
            labeled.push_back(std::move(lp));
            labeled_splits.push_back(image_splits[i]);
        }
    }
    return build_dataset(std::move(unlabeled), std::move(unlabeled_splits), std::move(labeled),
                         std::move(labeled_splits), split.seed);
}

} // namespace sonarssl
