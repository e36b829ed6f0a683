// sonarssl command-line tool. Talks to the library only through the C API.

#include "sonarssl/sonarssl.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Failure {
    mj_status status;
};

void check(mj_status s, const std::string& what) {
    if (s == MJ_OK) return;
    std::cerr << "error: " << what << " failed (" << mj_status_name(s) << "): " << mj_last_error() << "\n";
    throw Failure{s};
}

struct DatasetDeleter {
    void operator()(mj_dataset* d) const { mj_dataset_free(d); }
};
struct EncoderDeleter {
    void operator()(mj_encoder* e) const { mj_encoder_free(e); }
};
using DatasetPtr = std::unique_ptr<mj_dataset, DatasetDeleter>;
using EncoderPtr = std::unique_ptr<mj_encoder, EncoderDeleter>;

std::string take(char* s) {
    std::string out(s);
    mj_string_free(s);
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        std::cerr << "error: cannot open " << path << "\n";
        throw Failure{MJ_ERR_NOT_FOUND};
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

DatasetPtr load_manifests(const std::vector<std::string>& dirs) {
    std::vector<DatasetPtr> parts;
    for (const auto& d : dirs) {
        mj_dataset* ds = nullptr;
        check(mj_dataset_load(d.c_str(), &ds), "loading " + d);
        parts.emplace_back(ds);
    }
    if (parts.size() == 1) return std::move(parts.front());
    std::vector<const mj_dataset*> raw;
    for (const auto& p : parts) raw.push_back(p.get());
    mj_dataset* merged = nullptr;
    check(mj_dataset_concat(raw.data(), raw.size(), &merged), "merging manifests");
    return DatasetPtr(merged);
}

void print_counts(const mj_dataset* ds, const std::string& where) {
    size_t unlabeled = 0, labeled = 0;
    check(mj_dataset_counts(ds, &unlabeled, &labeled), "counting patches");
    std::cout << "wrote " << where << ": " << unlabeled << " unlabeled, " << labeled << " labeled patches\n";
}

void epoch_line(int epoch, double loss, double var, double erank, void*) {
    std::printf("epoch %d  loss %.5f  mean_var %.4f  effective_rank %.2f\n", epoch, loss, var, erank);
    std::fflush(stdout);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sonarssl: self-supervised pretraining and probe evaluation on sonar patches"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(mj_version()));

    auto* gen = app.add_subcommand("gen-synthetic", "Render synthetic sonar scenes and labeled patches");
    int n_scenes = 8, n_per_class = 100;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    gen->add_option("--n-scenes", n_scenes, "Scenes to render (grid patches become unlabeled data)")->capture_default_str();
    gen->add_option("--n-per-class", n_per_class, "Labeled patches per class")->capture_default_str();
    gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
    gen->add_option("--out", gen_out, "Output directory")->required();

    auto* ext = app.add_subcommand("extract-patches", "Extract grid and labeled patches from an image directory");
    std::string images, annotations, ext_out, subset = "real";
    int window = 96, stride = 64;
    std::uint64_t split_seed = 0;
    ext->add_option("--images", images, "Directory of .pgm/.ppm/.png images")->required();
    ext->add_option("--annotations", annotations, "Annotation JSON file");
    ext->add_option("--window", window, "Patch size")->capture_default_str();
    ext->add_option("--stride", stride, "Grid stride")->capture_default_str();
    ext->add_option("--subset", subset, "Subset tag")->check(CLI::IsMember({"real", "synthetic"}))->capture_default_str();
    ext->add_option("--seed", split_seed, "Split seed")->capture_default_str();
    ext->add_option("--out", ext_out, "Output dataset directory")->required();

    auto* pre = app.add_subcommand("pretrain", "Self-supervised pretraining");
    std::string config_path, pre_out, aug;
    std::vector<std::string> pre_manifests;
    pre->add_option("--config", config_path, "Pretraining config (JSON); defaults when omitted");
    pre->add_option("--manifest", pre_manifests, "Dataset directory (repeatable)")->required();
    pre->add_option("--aug", aug, "Augmentation preset override")->check(CLI::IsMember({"sss_adapted", "natural_image"}));
    pre->add_option("--out", pre_out, "Run directory")->required();
    bool print_config = false;
    pre->add_flag("--print-config", print_config, "Print the resolved config before training");

    auto* probe = app.add_subcommand("probe", "Probe a backbone on the labeled splits");
    std::string checkpoint, random_arch, probe_manifest, mode = "linear", task = "three_class", probe_out, probe_config;
    int n_seeds = 10;
    std::uint64_t init_seed = 0;
    auto* ck = probe->add_option("--checkpoint", checkpoint, "Encoder checkpoint (.mjck)");
    auto* ra = probe->add_option("--random-init", random_arch, "Probe a randomly initialized encoder of this arch")
                   ->check(CLI::IsMember({"vit_tiny", "vit_small", "toy_conv"}));
    ck->excludes(ra);
    probe->add_option("--init-seed", init_seed, "Seed for --random-init")->capture_default_str();
    probe->add_option("--manifest", probe_manifest, "Labeled dataset directory")->required();
    probe->add_option("--mode", mode, "Probe mode")
        ->check(CLI::IsMember({"linear", "mlp", "finetune", "finetune_mlp"}))
        ->capture_default_str();
    probe->add_option("--task", task, "Task")->check(CLI::IsMember({"three_class", "binary"}))->capture_default_str();
    probe->add_option("--seeds", n_seeds, "Number of seeds (0..n-1)")->check(CLI::Range(2, 1000))->capture_default_str();
    probe->add_option("--config", probe_config, "Probe hyperparameters (JSON)");
    probe->add_option("--out", probe_out, "Output directory")->required();

    auto* rep = app.add_subcommand("report", "Render result tables and training curves");
    std::string results, rep_out;
    rep->add_option("--results", results, "Directory with probe results and run directories")->required();
    rep->add_option("--out", rep_out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            mj_dataset* ds = nullptr;
            check(mj_generate_synthetic(gen_out.c_str(), n_scenes, n_per_class, gen_seed, &ds), "gen-synthetic");
            DatasetPtr owned(ds);
            print_counts(ds, (fs::path(gen_out) / "dataset").string());
        } else if (*ext) {
            mj_dataset* ds = nullptr;
            check(mj_extract_patches(images.c_str(), annotations.empty() ? nullptr : annotations.c_str(), window, stride,
                                     subset.c_str(), split_seed, &ds),
                  "extract-patches");
            DatasetPtr owned(ds);
            check(mj_dataset_save(ds, ext_out.c_str()), "saving dataset");
            print_counts(ds, ext_out);
        } else if (*pre) {
            json cfg = json::object();
            if (!config_path.empty()) {
                cfg = json::parse(read_file(config_path), nullptr, false);
                if (cfg.is_discarded() || !cfg.is_object()) {
                    std::cerr << "error: " << config_path << " is not a JSON object\n";
                    return MJ_ERR_FORMAT;
                }
            }
            if (!aug.empty()) {
                char* block = nullptr;
                check(mj_augment_preset(aug.c_str(), cfg.value("views", 4), &block), "augmentation preset");
                cfg["augment"] = json::parse(take(block));
            }
            if (print_config) std::cout << cfg.dump(2) << "\n";
            auto ds = load_manifests(pre_manifests);
            check(mj_pretrain(ds.get(), cfg.dump().c_str(), pre_out.c_str(), epoch_line, nullptr), "pretrain");
            std::cout << "run written to " << pre_out << "\n";
        } else if (*probe) {
            if (checkpoint.empty() == random_arch.empty()) {
                std::cerr << "error: give exactly one of --checkpoint or --random-init\n";
                return MJ_ERR_INVALID_ARGUMENT;
            }
            mj_encoder* enc = nullptr;
            if (!checkpoint.empty()) {
                check(mj_encoder_load(checkpoint.c_str(), &enc), "loading checkpoint");
            } else {
                check(mj_encoder_create(random_arch.c_str(), init_seed, &enc), "creating encoder");
            }
            EncoderPtr owned(enc);
            mj_dataset* ds = nullptr;
            check(mj_dataset_load(probe_manifest.c_str(), &ds), "loading " + probe_manifest);
            DatasetPtr owned_ds(ds);
            json cfg = json::object();
            if (!probe_config.empty()) cfg = json::parse(read_file(probe_config));
            cfg["mode"] = mode;
            cfg["task"] = task;
            std::vector<std::uint64_t> seeds;
            for (int s = 0; s < n_seeds; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
            cfg["seeds"] = seeds;
            const auto out_file = fs::path(probe_out) / ("probe_" + mode + "_" + task + ".json");
            double mean = 0, sd = 0;
            check(mj_probe(enc, ds, cfg.dump().c_str(), nullptr, out_file.string().c_str(), &mean, &sd), "probe");
            std::printf("%s %s macro-F1 %.4f +- %.4f over %d seeds\nwrote %s\n", mode.c_str(), task.c_str(), mean, sd,
                        n_seeds, out_file.string().c_str());
        } else if (*rep) {
            check(mj_report(results.c_str(), rep_out.c_str()), "report");
            std::cout << "tables written to " << rep_out << "\n";
        }
    } catch (const Failure& f) {
        return static_cast<int>(f.status);
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return MJ_ERR_FORMAT;
    }
    return 0;
}
