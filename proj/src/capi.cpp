#include "sonarssl/sonarssl.h"

#include "augment.hpp"
#include "common.hpp"
#include "encoder.hpp"
#include "manifest.hpp"
#include "objectives.hpp"
#include "pipeline.hpp"
#include "probe.hpp"
#include "report.hpp"
#include "trainer.hpp"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>

struct mj_dataset {
    sonarssl::PatchDataset ds;
};

struct mj_encoder {
    sonarssl::Encoder enc;
    nlohmann::json representation;
};

namespace {

thread_local std::string g_last_error;

mj_status to_status(sonarssl::ErrorCode code) {
    using sonarssl::ErrorCode;
    switch (code) {
    case ErrorCode::invalid_argument: return MJ_ERR_INVALID_ARGUMENT;
    case ErrorCode::io: return MJ_ERR_IO;
    case ErrorCode::format: return MJ_ERR_FORMAT;
    case ErrorCode::shape_mismatch: return MJ_ERR_SHAPE_MISMATCH;
    case ErrorCode::non_finite: return MJ_ERR_NON_FINITE;
    case ErrorCode::not_found: return MJ_ERR_NOT_FOUND;
    case ErrorCode::hash_mismatch: return MJ_ERR_HASH_MISMATCH;
    }
    return MJ_ERR_INTERNAL;
}

template <class F>
mj_status guarded(F&& f) {
    g_last_error.clear();
    try {
        f();
        return MJ_OK;
    } catch (const sonarssl::Error& e) {
        g_last_error = e.what();
        return to_status(e.code());
    } catch (const nlohmann::json::exception& e) {
        g_last_error = std::string("json: ") + e.what();
        return MJ_ERR_FORMAT;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MJ_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return MJ_ERR_INTERNAL;
    }
}

void need(const void* p, const char* what) {
    sonarssl::require_arg(p != nullptr, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

nlohmann::json parse_json(const char* text, const char* what) {
    auto j = nlohmann::json::parse(text, nullptr, false);
    sonarssl::require(!j.is_discarded() && j.is_object(), sonarssl::ErrorCode::format,
                      std::string(what) + " is not a JSON object");
    return j;
}

} // namespace

extern "C" {

const char* mj_version(void) { return "0.1.0"; }

const char* mj_last_error(void) { return g_last_error.c_str(); }

const char* mj_status_name(mj_status status) {
    switch (status) {
    case MJ_OK: return "ok";
    case MJ_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case MJ_ERR_IO: return "io";
    case MJ_ERR_FORMAT: return "format";
    case MJ_ERR_SHAPE_MISMATCH: return "shape_mismatch";
    case MJ_ERR_NON_FINITE: return "non_finite";
    case MJ_ERR_NOT_FOUND: return "not_found";
    case MJ_ERR_HASH_MISMATCH: return "hash_mismatch";
    case MJ_ERR_INTERNAL: return "internal";
    }
    return "unknown";
}

void mj_string_free(char* s) { std::free(s); }

mj_status mj_generate_synthetic(const char* out_dir, int n_scenes, int n_per_class, uint64_t seed, mj_dataset** out) {
    return guarded([&] {
        need(out_dir, "out_dir");
        sonarssl::SyntheticCorpusSpec spec;
        spec.n_scenes = n_scenes;
        spec.n_per_class = n_per_class;
        spec.seed = seed;
        auto ds = sonarssl::generate_synthetic_corpus(spec, out_dir);
        if (out) *out = new mj_dataset{std::move(ds)};
    });
}

mj_status mj_extract_patches(const char* images_dir, const char* annotations_file, int window, int stride,
                             const char* subset, uint64_t split_seed, mj_dataset** out) {
    return guarded([&] {
        need(images_dir, "images_dir");
        need(out, "out");
        sonarssl::AnnotationIndex ann;
        if (annotations_file) ann = sonarssl::read_annotations(annotations_file);
        sonarssl::ExtractionSpec spec;
        spec.window = window;
        spec.stride = stride;
        const std::string tag = subset ? subset : "real";
        sonarssl::require_arg(tag == "real" || tag == "synthetic", "unknown subset '" + tag + "'");
        spec.subset = sonarssl::parse_subset(tag);
        spec.split.seed = split_seed;
        *out = new mj_dataset{sonarssl::extract_dataset(images_dir, ann, spec)};
    });
}

mj_status mj_dataset_load(const char* dir, mj_dataset** out) {
    return guarded([&] {
        need(dir, "dir");
        need(out, "out");
        *out = new mj_dataset{sonarssl::PatchDataset::load(dir)};
    });
}

mj_status mj_dataset_save(const mj_dataset* ds, const char* dir) {
    return guarded([&] {
        need(ds, "dataset");
        need(dir, "dir");
        ds->ds.save(dir);
    });
}

mj_status mj_dataset_concat(const mj_dataset* const* parts, size_t count, mj_dataset** out) {
    return guarded([&] {
        need(parts, "parts");
        need(out, "out");
        std::vector<sonarssl::PatchDataset> copies;
        for (size_t i = 0; i < count; ++i) {
            need(parts[i], "dataset part");
            copies.push_back(parts[i]->ds);
        }
        *out = new mj_dataset{sonarssl::concat_datasets(copies)};
    });
}

mj_status mj_dataset_counts(const mj_dataset* ds, size_t* unlabeled, size_t* labeled) {
    return guarded([&] {
        need(ds, "dataset");
        const auto u = ds->ds.unlabeled_indices().size();
        if (unlabeled) *unlabeled = u;
        if (labeled) *labeled = ds->ds.size() - u;
    });
}

void mj_dataset_free(mj_dataset* ds) { delete ds; }

mj_status mj_pretrain(const mj_dataset* ds, const char* config_json, const char* out_dir, mj_epoch_callback callback,
                      void* user) {
    return guarded([&] {
        need(ds, "dataset");
        need(config_json, "config_json");
        need(out_dir, "out_dir");
        const auto cfg = sonarssl::PretrainConfig::from_json(parse_json(config_json, "pretrain config"));
        sonarssl::PretrainHooks hooks;
        if (callback) {
            hooks.on_epoch = [&](const sonarssl::EpochRecord& e) {
                callback(e.epoch, e.mean_loss, e.diag.mean_var, e.diag.effective_rank, user);
            };
        }
        sonarssl::pretrain(ds->ds, cfg, out_dir, hooks);
    });
}

mj_status mj_default_pretrain_config(char** json_out) {
    return guarded([&] {
        need(json_out, "json_out");
        *json_out = dup_string(sonarssl::PretrainConfig{}.to_json().dump(2));
    });
}

mj_status mj_augment_preset(const char* name, int n_views, char** json_out) {
    return guarded([&] {
        need(name, "name");
        need(json_out, "json_out");
        const auto preset = sonarssl::parse_aug_preset(name);
        sonarssl::require_arg(preset != sonarssl::AugPreset::custom, "custom is not a named preset");
        *json_out = dup_string(sonarssl::AugmentPolicy::from_preset(preset, n_views).to_json().dump(2));
    });
}

mj_status mj_encoder_create(const char* arch, uint64_t seed, mj_encoder** out) {
    return guarded([&] {
        need(arch, "arch");
        need(out, "out");
        auto spec = sonarssl::EncoderSpec::preset(sonarssl::parse_arch(arch));
        sonarssl::Encoder enc(spec, seed);
        auto rep = sonarssl::describe_initial(enc);
        rep["init_seed"] = seed;
        *out = new mj_encoder{std::move(enc), std::move(rep)};
    });
}

mj_status mj_encoder_load(const char* checkpoint_path, mj_encoder** out) {
    return guarded([&] {
        need(checkpoint_path, "checkpoint_path");
        need(out, "out");
        auto enc = sonarssl::load_encoder(checkpoint_path);
        const auto ckpt = sonarssl::read_checkpoint(checkpoint_path);
        auto rep = sonarssl::describe_checkpoint(checkpoint_path, ckpt, enc);
        *out = new mj_encoder{std::move(enc), std::move(rep)};
    });
}

mj_status mj_encoder_dims(const mj_encoder* enc, int* feature_dim, int* proj_dim) {
    return guarded([&] {
        need(enc, "encoder");
        if (feature_dim) *feature_dim = enc->enc.feature_dim();
        if (proj_dim) *proj_dim = enc->enc.proj_dim();
    });
}

mj_status mj_encoder_param_count(const mj_encoder* enc, int64_t* backbone, int64_t* projector) {
    return guarded([&] {
        need(enc, "encoder");
        if (backbone) *backbone = enc->enc.backbone_param_count();
        if (projector) *projector = enc->enc.projector_param_count();
    });
}

mj_status mj_encoder_encode(const mj_encoder* enc, const float* pixels, size_t count, float* h_out, float* z_out) {
    return guarded([&] {
        need(enc, "encoder");
        need(pixels, "pixels");
        sonarssl::require_arg(count > 0, "count must be positive");
        const int s = enc->enc.spec().input_size;
        auto x = torch::from_blob(const_cast<float*>(pixels), {static_cast<int64_t>(count), 3, s, s}, torch::kFloat32).clone();
        sonarssl::Encoder copy = enc->enc.clone();
        copy.train(false);
        torch::NoGradGuard guard;
        const auto e = copy.forward(x);
        if (h_out) {
            auto h = e.h.contiguous();
            std::memcpy(h_out, h.data_ptr<float>(), static_cast<size_t>(h.numel()) * sizeof(float));
        }
        if (z_out) {
            auto z = e.z.contiguous();
            std::memcpy(z_out, z.data_ptr<float>(), static_cast<size_t>(z.numel()) * sizeof(float));
        }
    });
}

void mj_encoder_free(mj_encoder* enc) { delete enc; }

mj_status mj_probe(const mj_encoder* enc, const mj_dataset* ds, const char* probe_config_json,
                   const char* representation_json, const char* out_path, double* macro_f1_mean,
                   double* macro_f1_std) {
    return guarded([&] {
        need(enc, "encoder");
        need(ds, "dataset");
        need(probe_config_json, "probe_config_json");
        const auto cfg = sonarssl::ProbeConfig::from_json(parse_json(probe_config_json, "probe config"));
        auto rep = representation_json ? parse_json(representation_json, "representation") : enc->representation;
        const auto result = sonarssl::run_probe(enc->enc, ds->ds, cfg, rep);
        if (out_path) {
            const std::filesystem::path p(out_path);
            if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
            std::ofstream out(p);
            sonarssl::require(static_cast<bool>(out), sonarssl::ErrorCode::io, "cannot write " + p.string());
            out << result.to_json().dump(2) << "\n";
            sonarssl::require(static_cast<bool>(out), sonarssl::ErrorCode::io, "write failed for " + p.string());
        }
        const auto& agg = result.aggregate.at("macro_f1");
        if (macro_f1_mean) *macro_f1_mean = agg.mean;
        if (macro_f1_std) *macro_f1_std = agg.std;
    });
}

mj_status mj_report(const char* results_dir, const char* out_dir) {
    return guarded([&] {
        need(results_dir, "results_dir");
        need(out_dir, "out_dir");
        const auto grid = sonarssl::ExperimentGrid::load(results_dir);
        sonarssl::render_tables(grid, out_dir);
        std::vector<std::pair<std::string, sonarssl::RunRecord>> runs;
        std::vector<std::filesystem::path> dirs;
        for (const auto& e : std::filesystem::recursive_directory_iterator(results_dir)) {
            if (e.is_regular_file() && e.path().filename() == "run.json") dirs.push_back(e.path().parent_path());
        }
        std::sort(dirs.begin(), dirs.end());
        for (const auto& d : dirs) {
            auto name = std::filesystem::relative(d, results_dir).generic_string();
            if (name == ".") name = "run";
            for (auto& c : name) {
                if (c == '/') c = '_';
            }
            auto record = sonarssl::RunRecord::load(d);
            if (!record.steps.empty()) runs.emplace_back("curves_" + name, std::move(record));
        }
        if (!runs.empty()) sonarssl::render_curves(runs, std::filesystem::path(out_dir) / "curves");
    });
}

mj_status mj_epps_pulley(const double* y, size_t n, int closed_form, int quad_nodes, double* value, double* grad) {
    return guarded([&] {
        need(y, "y");
        need(value, "value");
        const auto mode = closed_form ? sonarssl::StatisticMode::closed_form : sonarssl::StatisticMode::quadrature;
        sonarssl::require_arg(quad_nodes >= 3 || closed_form, "quad_nodes must be >= 3");
        const auto quad = sonarssl::Quadrature::gauss_hermite(closed_form ? 3 : quad_nodes);
        *value = sonarssl::epps_pulley_1d(std::span<const double>(y, n), mode, quad,
                                          grad ? std::span<double>(grad, n) : std::span<double>());
    });
}

mj_status mj_combined_loss(const double* z, size_t n, size_t views, size_t dim, double lambda, int num_slices,
                           int quad_nodes, int closed_form, uint64_t slice_seed, double* total, double* invariance,
                           double* sigreg, double* grad) {
    return guarded([&] {
        need(z, "z");
        sonarssl::require_arg(n > 0 && views > 0 && dim > 0, "batch dimensions must be positive");
        sonarssl::RowMatrix m = Eigen::Map<const sonarssl::RowMatrix>(z, static_cast<Eigen::Index>(n * views),
                                                                      static_cast<Eigen::Index>(dim));
        sonarssl::ViewBatch batch(n, views, std::move(m));
        sonarssl::LossConfig cfg;
        cfg.lambda = lambda;
        cfg.num_slices = num_slices;
        cfg.quad_nodes = quad_nodes;
        cfg.mode = closed_form ? sonarssl::StatisticMode::closed_form : sonarssl::StatisticMode::quadrature;
        cfg.validate();
        const auto slices = sonarssl::SliceSet::sample(dim, static_cast<size_t>(num_slices), slice_seed, quad_nodes);
        sonarssl::RowMatrix g;
        const auto loss = sonarssl::combined_loss(batch, slices, cfg, grad ? &g : nullptr);
        if (total) *total = loss.total;
        if (invariance) *invariance = loss.invariance;
        if (sigreg) *sigreg = loss.sigreg;
        if (grad) std::memcpy(grad, g.data(), sizeof(double) * static_cast<size_t>(g.size()));
    });
}

} // extern "C"
