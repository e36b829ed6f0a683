#include "manifest.hpp"

#include "common.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

namespace sonarssl {

using nlohmann::json;

namespace {

template <typename T>
void put_le(std::ostream& out, T value) {
    std::array<unsigned char, sizeof(T)> bytes{};
    using U = std::conditional_t<sizeof(T) == 2, std::uint16_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
    auto bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::filesystem::path& path) {
    std::array<unsigned char, sizeof(T)> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
    require(in.gcount() == static_cast<std::streamsize>(sizeof(T)), ErrorCode::format,
            path.string() + ": truncated archive");
    using U = std::conditional_t<sizeof(T) == 2, std::uint16_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bits |= static_cast<U>(bytes[i]) << (8 * i);
    }
    return std::bit_cast<T>(bits);
}

json stats_to_json(const ChannelStats& s) { return json{{"mean", s.mean}, {"std", s.std}}; }

} // namespace

void write_patch_archive(const std::filesystem::path& path, std::span<const Image> patches) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
    out.write("MJPA", 4);
    put_le<std::uint16_t>(out, kArchiveVersion);
    put_le<std::uint64_t>(out, patches.size());
    for (const Image& img : patches) {
        require_arg(img.channels < 65536 && img.height < 65536 && img.width < 65536, "patch too large for archive");
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(img.channels));
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(img.height));
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(img.width));
        if constexpr (std::endian::native == std::endian::little) {
            out.write(reinterpret_cast<const char*>(img.data.data()),
                      static_cast<std::streamsize>(img.data.size() * sizeof(float)));
        } else {
            for (float v : img.data) put_le<float>(out, v);
        }
    }
    require(static_cast<bool>(out), ErrorCode::io, "failed writing " + path.string());
}

std::vector<Image> read_patch_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    require(in.gcount() == 4 && std::memcmp(magic, "MJPA", 4) == 0, ErrorCode::format,
            path.string() + ": not a patch archive (bad magic)");
    const auto version = get_le<std::uint16_t>(in, path);
    require(version == kArchiveVersion, ErrorCode::format,
            path.string() + ": unsupported archive version " + std::to_string(version));
    const auto count = get_le<std::uint64_t>(in, path);
    std::vector<Image> out;
    out.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
    for (std::uint64_t i = 0; i < count; ++i) {
        const int c = get_le<std::uint16_t>(in, path);
        const int h = get_le<std::uint16_t>(in, path);
        const int w = get_le<std::uint16_t>(in, path);
        require(c > 0 && h > 0 && w > 0, ErrorCode::format, path.string() + ": zero-sized patch");
        Image img(c, h, w);
        if constexpr (std::endian::native == std::endian::little) {
            const auto bytes = static_cast<std::streamsize>(img.data.size() * sizeof(float));
            in.read(reinterpret_cast<char*>(img.data.data()), bytes);
            require(in.gcount() == bytes, ErrorCode::format, path.string() + ": truncated archive");
        } else {
            for (float& v : img.data) v = get_le<float>(in, path);
        }
        for (float v : img.data) {
            require(std::isfinite(v), ErrorCode::format, path.string() + ": non-finite pixel in patch " + std::to_string(i));
        }
        out.push_back(std::move(img));
    }
    return out;
}

void DatasetManifest::validate() const {
    for (const auto& [subset, st] : normalization) {
        require(!st.mean.empty() && st.mean.size() == st.std.size(), ErrorCode::format,
                "normalization record for '" + std::string(to_string(subset)) + "' is malformed");
        for (double s : st.std) {
            require(s > 0.0, ErrorCode::format, "normalization std must be positive");
        }
    }
    std::set<std::pair<std::string, std::uint64_t>> seen;
    for (const auto& e : entries) {
        require(normalization.count(e.subset) != 0, ErrorCode::format,
                "entry subset '" + std::string(to_string(e.subset)) + "' has no normalization record");
        require(seen.emplace(e.locator.file, e.locator.index).second, ErrorCode::format,
                "duplicate patch locator " + e.locator.file + "#" + std::to_string(e.locator.index));
    }
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    manifest.validate();
    json norm = json::object();
    for (const auto& [subset, st] : manifest.normalization) norm[std::string(to_string(subset))] = stats_to_json(st);

    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
    out << "{\n"
        << "  \"format\": \"sonarssl-manifest\",\n"
        << "  \"version\": 1,\n"
        << "  \"split_seed\": " << manifest.split_seed << ",\n"
        << "  \"normalization\": " << norm.dump() << ",\n"
        << "  \"entries\": [";
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        const auto& e = manifest.entries[i];
        json rec{{"file", e.locator.file},
                 {"index", e.locator.index},
                 {"label", e.label ? json(std::string(to_string(*e.label))) : json(nullptr)},
                 {"subset", std::string(to_string(e.subset))},
                 {"split", std::string(to_string(e.split))},
                 {"source_id", e.source_id},
                 {"row", e.row},
                 {"col", e.col}};
        out << (i == 0 ? "\n    " : ",\n    ") << rec.dump();
    }
    out << "\n  ]\n}\n";
    require(static_cast<bool>(out), ErrorCode::io, "failed writing " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path.string());
    DatasetManifest m;
    try {
        const json doc = json::parse(in);
        require(doc.value("format", "") == "sonarssl-manifest", ErrorCode::format,
                path.string() + ": not a manifest");
        m.split_seed = doc.at("split_seed").get<std::uint64_t>();
        for (const auto& [name, st] : doc.at("normalization").items()) {
            m.normalization[parse_subset(name)] =
                ChannelStats{st.at("mean").get<std::vector<double>>(), st.at("std").get<std::vector<double>>()};
        }
        for (const auto& rec : doc.at("entries")) {
            ManifestEntry e;
            e.locator = {rec.at("file").get<std::string>(), rec.at("index").get<std::uint64_t>()};
            if (!rec.at("label").is_null()) e.label = parse_label(rec.at("label").get<std::string>());
            e.subset = parse_subset(rec.at("subset").get<std::string>());
            e.split = parse_split(rec.at("split").get<std::string>());
            e.source_id = rec.at("source_id").get<std::string>();
            e.row = rec.at("row").get<int>();
            e.col = rec.at("col").get<int>();
            m.entries.push_back(std::move(e));
        }
    } catch (const json::exception& ex) {
        throw Error(ErrorCode::format, path.string() + ": " + ex.what());
    }
    m.validate();
    return m;
}

const ChannelStats& PatchDataset::stats_for(std::size_t index) const {
    return manifest.normalization.at(manifest.entries.at(index).subset);
}

std::vector<std::size_t> PatchDataset::unlabeled_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        if (!manifest.entries[i].label) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> PatchDataset::labeled_indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        const auto& e = manifest.entries[i];
        if (e.label && e.split == split) out.push_back(i);
    }
    return out;
}

void PatchDataset::save(const std::filesystem::path& dir) const {
    require_arg(pixels.size() == manifest.entries.size(), "pixels and entries differ in length");
    std::filesystem::create_directories(dir);
    DatasetManifest m = manifest;
    for (std::size_t i = 0; i < m.entries.size(); ++i) m.entries[i].locator = {kArchiveFile, i};
    write_patch_archive(dir / kArchiveFile, pixels);
    write_manifest(dir / kManifestFile, m);
}

PatchDataset PatchDataset::load(const std::filesystem::path& dir) {
    PatchDataset ds;
    ds.manifest = read_manifest(dir / kManifestFile);
    std::map<std::string, std::vector<Image>> archives;
    for (const auto& e : ds.manifest.entries) {
        auto it = archives.find(e.locator.file);
        if (it == archives.end()) {
            it = archives.emplace(e.locator.file, read_patch_archive(dir / e.locator.file)).first;
        }
        require(e.locator.index < it->second.size(), ErrorCode::format,
                "locator " + e.locator.file + "#" + std::to_string(e.locator.index) + " out of range");
        ds.pixels.push_back(it->second[e.locator.index]);
    }
    return ds;
}

PatchDataset build_dataset(std::vector<PatchTensor> unlabeled, std::vector<Split> unlabeled_splits,
                           std::vector<LabeledPatch> labeled, std::vector<Split> labeled_splits,
                           std::uint64_t split_seed) {
    require_arg(unlabeled.size() == unlabeled_splits.size(), "unlabeled split assignment size mismatch");
    require_arg(labeled.size() == labeled_splits.size(), "labeled split assignment size mismatch");
    PatchDataset ds;
    ds.manifest.split_seed = split_seed;
    auto add = [&](PatchTensor& p, std::optional<Label> label, Split split) {
        ManifestEntry e;
        e.locator = {kArchiveFile, ds.pixels.size()};
        e.label = label;
        e.subset = p.subset;
        e.split = split;
        e.source_id = p.source_id;
        e.row = p.row;
        e.col = p.col;
        ds.manifest.entries.push_back(std::move(e));
        ds.pixels.push_back(std::move(p.pixels));
    };
    for (std::size_t i = 0; i < unlabeled.size(); ++i) add(unlabeled[i], std::nullopt, unlabeled_splits[i]);
    for (std::size_t i = 0; i < labeled.size(); ++i) add(labeled[i].patch, labeled[i].label, labeled_splits[i]);

    std::map<Subset, std::vector<const Image*>> train_groups;
    std::set<Subset> present;
    for (std::size_t i = 0; i < ds.pixels.size(); ++i) {
        const auto& e = ds.manifest.entries[i];
        present.insert(e.subset);
        if (e.split == Split::train) train_groups[e.subset].push_back(&ds.pixels[i]);
    }
    for (Subset s : present) {
        require_arg(train_groups.count(s) != 0,
                    "subset '" + std::string(to_string(s)) + "' has no training patches for normalization");
    }
    if (!train_groups.empty()) ds.manifest.normalization = compute_subset_stats(train_groups);
    return ds;
}

PatchDataset concat_datasets(std::span<const PatchDataset> parts) {
    PatchDataset out;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto& part = parts[p];
        if (p == 0) out.manifest.split_seed = part.manifest.split_seed;
        for (const auto& [subset, st] : part.manifest.normalization) {
            auto [it, inserted] = out.manifest.normalization.emplace(subset, st);
            require_arg(inserted || it->second == st,
                        "conflicting normalization records for subset '" + std::string(to_string(subset)) + "'");
        }
        for (std::size_t i = 0; i < part.size(); ++i) {
            ManifestEntry e = part.manifest.entries[i];
            e.locator.file = "part" + std::to_string(p) + "/" + e.locator.file;
            out.manifest.entries.push_back(std::move(e));
            out.pixels.push_back(part.pixels[i]);
        }
    }
    return out;
}

} // namespace sonarssl
