#include "trainer.hpp"

#include "common.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace sonarssl {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(Objective objective) {
    switch (objective) {
    case Objective::sigreg: return "sigreg";
    case Objective::vicreg: return "vicreg";
    case Objective::simclr: return "simclr";
    }
    return "?";
}

std::string_view to_string(DataMode mode) {
    switch (mode) {
    case DataMode::real: return "real";
    case DataMode::synthetic: return "synthetic";
    case DataMode::real_plus_syn: return "real_plus_syn";
    }
    return "?";
}

Objective parse_objective(std::string_view text) {
    for (Objective o : {Objective::sigreg, Objective::vicreg, Objective::simclr}) {
        if (to_string(o) == text) return o;
    }
    throw Error(ErrorCode::invalid_argument, "unknown objective '" + std::string(text) + "'");
}

DataMode parse_data_mode(std::string_view text) {
    for (DataMode m : {DataMode::real, DataMode::synthetic, DataMode::real_plus_syn}) {
        if (to_string(m) == text) return m;
    }
    throw Error(ErrorCode::invalid_argument, "unknown data mode '" + std::string(text) + "'");
}

void PretrainConfig::validate() const {
    loss.validate();
    require_arg(batch_size >= 2, "batch_size must be >= 2");
    require_arg(epochs >= 1, "epochs must be >= 1");
    require_arg(views >= 2, "views must be >= 2");
    require_arg(micro_batch >= 0, "micro_batch must be >= 0");
    require_arg(lr > 0.0, "lr must be positive");
    require_arg(weight_decay >= 0.0, "weight_decay must be >= 0");
    require_arg(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0,1)");
    require_arg(warmup_epochs >= 0, "warmup_epochs must be >= 0");
    require_arg(temperature > 0.0, "temperature must be positive");
    require_arg(proj_dim >= 1, "proj_dim must be >= 1");
    require_arg(diagnostic_patches >= 2, "diagnostic_patches must be >= 2");
    augment.validate();
    effective_encoder().validate();
}

EncoderSpec PretrainConfig::effective_encoder() const {
    EncoderSpec s = encoder;
    s.set_proj_dim(proj_dim);
    return s;
}

json PretrainConfig::to_json() const {
    AugmentPolicy aug = augment;
    aug.n_views = views;
    return json{{"objective", std::string(to_string(objective))},
                {"loss", loss.to_json()},
                {"vicreg", vicreg.to_json()},
                {"temperature", temperature},
                {"proj_dim", proj_dim},
                {"views", views},
                {"batch_size", batch_size},
                {"micro_batch", micro_batch},
                {"optimizer", {{"name", "adamw"}, {"lr", lr}, {"weight_decay", weight_decay}, {"betas", {beta1, beta2}}}},
                {"schedule", {{"warmup_epochs", warmup_epochs}, {"decay", "cosine"}}},
                {"epochs", epochs},
                {"data_mode", std::string(to_string(data_mode))},
                {"seed", seed},
                {"augment", aug.to_json()},
                {"encoder", encoder.to_json()},
                {"checkpoint_every_epoch", checkpoint_every_epoch},
                {"diagnostic_patches", diagnostic_patches}};
}

PretrainConfig PretrainConfig::from_json(const json& j) {
    require(j.is_object(), ErrorCode::format, "pretrain config must be a JSON object");
    static const std::set<std::string> known{"objective", "loss", "vicreg", "temperature", "proj_dim", "views",
                                             "batch_size", "micro_batch", "optimizer", "schedule", "epochs",
                                             "data_mode", "seed", "augment", "encoder", "checkpoint_every_epoch",
                                             "diagnostic_patches"};
    for (const auto& item : j.items()) {
        require(known.contains(item.key()), ErrorCode::format, "unknown pretrain config key '" + item.key() + "'");
    }
    PretrainConfig c;
    try {
        c.objective = parse_objective(j.value("objective", std::string("sigreg")));
        if (j.contains("loss")) c.loss = LossConfig::from_json(j.at("loss"));
        if (j.contains("vicreg")) c.vicreg = VicregWeights::from_json(j.at("vicreg"));
        c.temperature = j.value("temperature", c.temperature);
        c.proj_dim = j.value("proj_dim", c.proj_dim);
        c.views = j.value("views", c.views);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.micro_batch = j.value("micro_batch", c.micro_batch);
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            require(o.value("name", std::string("adamw")) == "adamw", ErrorCode::format, "only the adamw optimizer is supported");
            c.lr = o.value("lr", c.lr);
            c.weight_decay = o.value("weight_decay", c.weight_decay);
            if (o.contains("betas")) {
                const auto b = o.at("betas").get<std::vector<double>>();
                require(b.size() == 2, ErrorCode::format, "optimizer.betas needs two values");
                c.beta1 = b[0], c.beta2 = b[1];
            }
        }
        if (j.contains("schedule")) {
            const auto& s = j.at("schedule");
            require(s.value("decay", std::string("cosine")) == "cosine", ErrorCode::format, "only cosine decay is supported");
            c.warmup_epochs = s.value("warmup_epochs", c.warmup_epochs);
        }
        c.epochs = j.value("epochs", c.epochs);
        c.data_mode = parse_data_mode(j.value("data_mode", std::string("real")));
        c.seed = j.value("seed", c.seed);
        if (j.contains("augment")) c.augment = AugmentPolicy::from_json(j.at("augment"));
        if (j.contains("encoder")) c.encoder = EncoderSpec::from_json(j.at("encoder"));
        c.checkpoint_every_epoch = j.value("checkpoint_every_epoch", c.checkpoint_every_epoch);
        c.diagnostic_patches = j.value("diagnostic_patches", c.diagnostic_patches);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::format, std::string("bad pretrain config: ") + e.what());
    }
    c.augment.n_views = c.views;
    c.validate();
    return c;
}

std::string PretrainConfig::hash() const { return hex64(fnv1a64(to_json().dump())); }

double lr_at(std::int64_t step, const PretrainConfig& cfg, std::int64_t spe) {
    require_arg(spe >= 1, "steps_per_epoch must be >= 1");
    const std::int64_t total = static_cast<std::int64_t>(cfg.epochs) * spe;
    require_arg(step >= 0 && step <= total,
                "step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
    const std::int64_t warm = std::min<std::int64_t>(static_cast<std::int64_t>(cfg.warmup_epochs) * spe, total);
    if (step < warm) return cfg.lr * static_cast<double>(step) / static_cast<double>(warm);
    if (total == warm) return cfg.lr;
    const double progress = static_cast<double>(step - warm) / static_cast<double>(total - warm);
    return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

json StepRecord::to_json() const {
    return json{{"step", step}, {"epoch", epoch}, {"lr", lr}, {"total", total}, {"terms", terms}, {"emb_var", emb_var}};
}

StepRecord StepRecord::from_json(const json& j) {
    StepRecord r;
    r.step = j.at("step").get<std::int64_t>();
    r.epoch = j.at("epoch").get<int>();
    r.lr = j.at("lr").get<double>();
    r.total = j.at("total").get<double>();
    r.terms = j.at("terms").get<std::map<std::string, double>>();
    r.emb_var = j.at("emb_var").get<std::vector<double>>();
    return r;
}

EmbeddingDiagnostics embedding_diagnostics(const RowMatrix& z) {
    require_arg(z.rows() >= 2 && z.cols() >= 1, "diagnostics need at least two embeddings");
    EmbeddingDiagnostics d;
    const Eigen::RowVectorXd mean = z.colwise().mean();
    const RowMatrix centered = z.rowwise() - mean;
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(z.rows() - 1);
    for (Eigen::Index k = 0; k < z.cols(); ++k) {
        d.dim_mean.push_back(mean(k));
        d.dim_var.push_back(cov(k, k));
        d.mean_std += std::sqrt(std::max(0.0, cov(k, k)));
        d.mean_var += cov(k, k);
    }
    d.mean_std /= static_cast<double>(z.cols());
    d.mean_var /= static_cast<double>(z.cols());

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
    double sum = 0.0;
    for (Eigen::Index k = 0; k < eig.eigenvalues().size(); ++k) sum += std::max(0.0, eig.eigenvalues()(k));
    if (sum > 0.0) {
        double entropy = 0.0;
        for (Eigen::Index k = 0; k < eig.eigenvalues().size(); ++k) {
            const double p = std::max(0.0, eig.eigenvalues()(k)) / sum;
            if (p > 0.0) entropy -= p * std::log(p);
        }
        d.effective_rank = std::exp(entropy);
    }
    return d;
}

json EpochRecord::to_json() const {
    return json{{"epoch", epoch},
                {"mean_loss", mean_loss},
                {"dim_mean", diag.dim_mean},
                {"dim_var", diag.dim_var},
                {"mean_std", diag.mean_std},
                {"mean_var", diag.mean_var},
                {"effective_rank", diag.effective_rank},
                {"checkpoint", checkpoint}};
}

EpochRecord EpochRecord::from_json(const json& j) {
    EpochRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.mean_loss = j.at("mean_loss").get<double>();
    r.diag.dim_mean = j.at("dim_mean").get<std::vector<double>>();
    r.diag.dim_var = j.at("dim_var").get<std::vector<double>>();
    r.diag.mean_std = j.at("mean_std").get<double>();
    r.diag.mean_var = j.at("mean_var").get<double>();
    r.diag.effective_rank = j.at("effective_rank").get<double>();
    r.checkpoint = j.value("checkpoint", std::string());
    return r;
}

json RunRecord::to_json() const {
    json steps_j = json::array(), epochs_j = json::array();
    for (const auto& s : steps) steps_j.push_back(s.to_json());
    for (const auto& e : epochs) epochs_j.push_back(e.to_json());
    return json{{"format", "sonarssl-run"},
                {"config", config},
                {"config_hash", config_hash},
                {"total_steps", total_steps},
                {"steps", steps_j},
                {"epochs", epochs_j},
                {"checkpoints", checkpoints},
                {"best_checkpoint", best_checkpoint},
                {"final_checkpoint", final_checkpoint}};
}

RunRecord RunRecord::from_json(const json& j) {
    require(j.value("format", std::string()) == "sonarssl-run", ErrorCode::format, "not a run record");
    RunRecord r;
    try {
        r.config = j.at("config");
        r.config_hash = j.at("config_hash").get<std::string>();
        r.total_steps = j.at("total_steps").get<std::int64_t>();
        for (const auto& s : j.at("steps")) r.steps.push_back(StepRecord::from_json(s));
        for (const auto& e : j.at("epochs")) r.epochs.push_back(EpochRecord::from_json(e));
        r.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
        r.best_checkpoint = j.value("best_checkpoint", std::string());
        r.final_checkpoint = j.value("final_checkpoint", std::string());
    } catch (const json::exception& e) {
        throw Error(ErrorCode::format, std::string("bad run record: ") + e.what());
    }
    return r;
}

RunRecord RunRecord::load(const fs::path& run_dir) {
    const fs::path p = run_dir / "run.json";
    std::ifstream in(p);
    require(static_cast<bool>(in), ErrorCode::not_found, "cannot open " + p.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::format, "cannot parse " + p.string() + ": " + e.what());
    }
}

ViewTensorBatch assemble_batch(const PatchDataset& data, std::span<const std::size_t> indices,
                               const AugmentPolicy& policy, std::uint64_t run_seed, std::uint64_t epoch) {
    require_arg(!indices.empty(), "empty batch");
    ViewTensorBatch b;
    b.n = indices.size();
    b.views = static_cast<std::size_t>(policy.n_views);
    std::vector<Image> images;
    images.reserve(b.n * b.views);
    for (std::size_t idx : indices) {
        require_arg(idx < data.size(), "batch index out of range");
        const ChannelStats& stats = data.stats_for(idx);
        b.provenance.indices.push_back(idx);
        b.provenance.subsets.push_back(data.manifest.entries[idx].subset);
        b.provenance.stats.push_back(&stats);
        for (auto& v : make_views(data.pixels[idx], stats, policy, view_stream_seed(run_seed, epoch, idx))) {
            images.push_back(std::move(v));
        }
    }
    b.x = to_tensor(images);
    return b;
}

std::vector<std::size_t> pretrain_pool(const PatchDataset& data, DataMode mode) {
    std::vector<std::size_t> out;
    for (std::size_t i : data.unlabeled_indices()) {
        const Subset s = data.manifest.entries[i].subset;
        if (mode == DataMode::real_plus_syn || (mode == DataMode::real) == (s == Subset::real)) out.push_back(i);
    }
    return out;
}

namespace {

RowMatrix to_eigen(const torch::Tensor& t) {
    const auto c = t.detach().to(torch::kFloat32).contiguous();
    using FloatRows = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return Eigen::Map<const FloatRows>(c.data_ptr<float>(), c.size(0), c.size(1)).cast<double>();
}

torch::Tensor to_torch(const RowMatrix& m) {
    auto t = torch::empty({m.rows(), m.cols()}, torch::kFloat32);
    using FloatRows = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<FloatRows>(t.data_ptr<float>(), m.rows(), m.cols()) = m.cast<float>();
    return t;
}

RowMatrix view_rows(const RowMatrix& z, std::size_t n, std::size_t views, std::size_t v) {
    RowMatrix out(static_cast<Eigen::Index>(n), z.cols());
    for (std::size_t i = 0; i < n; ++i) out.row(static_cast<Eigen::Index>(i)) = z.row(static_cast<Eigen::Index>(i * views + v));
    return out;
}

void add_view_rows(RowMatrix& grad, const RowMatrix& g, std::size_t views, std::size_t v) {
    for (Eigen::Index i = 0; i < g.rows(); ++i) grad.row(i * static_cast<Eigen::Index>(views) + static_cast<Eigen::Index>(v)) += g.row(i);
}

// Loss of the whole batch and dL/dz. Pairwise baselines average over all view pairs.
double objective_loss(const RowMatrix& z, std::size_t n, std::size_t views, const PretrainConfig& cfg,
                      std::int64_t step, std::map<std::string, double>& terms, RowMatrix& grad) {
    if (cfg.objective == Objective::sigreg) {
        const SliceSet slices = SliceSet::sample(static_cast<std::size_t>(z.cols()), static_cast<std::size_t>(cfg.loss.num_slices),
                                                 slice_seed_for_step(cfg.seed, static_cast<std::uint64_t>(step)),
                                                 cfg.loss.quad_nodes);
        const CombinedLoss l = combined_loss(ViewBatch(n, views, z), slices, cfg.loss, &grad);
        terms = {{"invariance", l.invariance}, {"sigreg", l.sigreg}};
        return l.total;
    }
    grad = RowMatrix::Zero(z.rows(), z.cols());
    const double pairs = static_cast<double>(views * (views - 1) / 2);
    double total = 0.0;
    terms.clear();
    for (std::size_t v = 0; v < views; ++v) {
        for (std::size_t w = v + 1; w < views; ++w) {
            const RowMatrix a = view_rows(z, n, views, v), b = view_rows(z, n, views, w);
            RowMatrix ga, gb;
            if (cfg.objective == Objective::vicreg) {
                const VicregTerms t = vicreg_loss(a, b, cfg.vicreg, &ga, &gb);
                total += t.total / pairs;
                terms["invariance"] += t.invariance / pairs;
                terms["variance"] += t.variance / pairs;
                terms["covariance"] += t.covariance / pairs;
            } else {
                const double l = simclr_loss(a, b, cfg.temperature, &ga, &gb);
                total += l / pairs;
                terms["nt_xent"] += l / pairs;
            }
            add_view_rows(grad, ga / pairs, views, v);
            add_view_rows(grad, gb / pairs, views, w);
        }
    }
    return total;
}

} // namespace

StepLoss compute_step_gradients(Encoder& encoder, const ViewTensorBatch& batch, const PretrainConfig& cfg,
                                std::int64_t step) {
    const auto rows = static_cast<std::int64_t>(batch.n * batch.views);
    require(batch.x.size(0) == rows, ErrorCode::shape_mismatch, "batch tensor does not hold N*V views");
    const bool chunked = cfg.micro_batch > 0 && static_cast<std::size_t>(cfg.micro_batch) < batch.n;
    const std::int64_t chunk_rows = chunked ? static_cast<std::int64_t>(cfg.micro_batch) * static_cast<std::int64_t>(batch.views) : rows;

    StepLoss out;
    RowMatrix grad;
    if (!chunked) {
        const Embeddings e = encoder.forward(batch.x);
        out.z = to_eigen(e.z);
        out.total = objective_loss(out.z, batch.n, batch.views, cfg, step, out.terms, grad);
        e.z.backward(to_torch(grad));
        return out;
    }
    {
        torch::NoGradGuard guard;
        std::vector<torch::Tensor> parts;
        for (std::int64_t r = 0; r < rows; r += chunk_rows) {
            parts.push_back(encoder.forward(batch.x.slice(0, r, std::min(rows, r + chunk_rows))).z);
        }
        out.z = to_eigen(torch::cat(parts));
    }
    out.total = objective_loss(out.z, batch.n, batch.views, cfg, step, out.terms, grad);
    const torch::Tensor g = to_torch(grad);
    for (std::int64_t r = 0; r < rows; r += chunk_rows) {
        const std::int64_t end = std::min(rows, r + chunk_rows);
        const Embeddings e = encoder.forward(batch.x.slice(0, r, end));
        e.z.backward(g.slice(0, r, end));
    }
    return out;
}

namespace {

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::string epoch_checkpoint_name(int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "checkpoints/epoch_%04d.mjck", epoch);
    return buf;
}

std::string failure_report(std::int64_t step, int epoch, double lr, const StepLoss* l, const std::string& cause) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << step << " (epoch " << epoch << ", lr " << lr << ")";
    if (l) {
        msg << ": total=" << l->total;
        for (const auto& [k, v] : l->terms) msg << " " << k << "=" << v;
        if (l->z.size() > 0) {
            msg << " max|z|=" << l->z.cwiseAbs().maxCoeff() << " finite(z)=" << (l->z.allFinite() ? "yes" : "no");
        }
    }
    if (!cause.empty()) msg << "; " << cause;
    return msg.str();
}

} // namespace

PretrainResult pretrain(const PatchDataset& data, const PretrainConfig& cfg_in, const fs::path& out_dir,
                        const PretrainHooks& hooks) {
    PretrainConfig cfg = cfg_in;
    cfg.augment.n_views = cfg.views;
    cfg.validate();

    const std::vector<std::size_t> pool = pretrain_pool(data, cfg.data_mode);
    require_arg(pool.size() >= static_cast<std::size_t>(cfg.batch_size),
                "data mode '" + std::string(to_string(cfg.data_mode)) + "' selects " + std::to_string(pool.size()) +
                    " unlabeled patches, fewer than batch_size " + std::to_string(cfg.batch_size));
    const auto n = static_cast<std::int64_t>(pool.size());
    const std::int64_t spe = steps_per_epoch(n, cfg.batch_size);

    PretrainResult result{RunRecord{}, Encoder(cfg.effective_encoder(), cfg.seed)};
    Encoder& enc = result.encoder;
    RunRecord& rec = result.record;
    rec.config = cfg.to_json();
    rec.config_hash = cfg.hash();
    rec.total_steps = spe * cfg.epochs;
    enc.train(true);

    torch::optim::AdamW opt(enc.parameters(), torch::optim::AdamWOptions(cfg.lr)
                                                  .weight_decay(cfg.weight_decay)
                                                  .betas({cfg.beta1, cfg.beta2}));

    // Fixed un-augmented subset for the per-epoch diagnostics.
    std::vector<std::size_t> diag_idx = pool;
    std::shuffle(diag_idx.begin(), diag_idx.end(), std::mt19937_64(derive_seed({cfg.seed, 0xd1a6ULL})));
    diag_idx.resize(std::min<std::size_t>(diag_idx.size(), static_cast<std::size_t>(cfg.diagnostic_patches)));
    std::sort(diag_idx.begin(), diag_idx.end());
    std::vector<Image> diag_inputs;
    for (std::size_t i : diag_idx) diag_inputs.push_back(prepare_eval_input(data.pixels[i], data.stats_for(i)));

    const bool write = !out_dir.empty();
    std::ofstream metrics;
    if (write) {
        fs::create_directories(out_dir / "checkpoints");
        write_json(out_dir / "config.json", rec.config);
        metrics.open(out_dir / "metrics.ndjson");
        require(static_cast<bool>(metrics), ErrorCode::io, "cannot write metrics log in " + out_dir.string());
    }
    auto save = [&](const std::string& rel, const std::string& kind, std::int64_t step, int epoch) {
        json meta{{"format", "sonarssl-checkpoint"}, {"kind", kind},       {"step", step},
                  {"epoch", epoch},                  {"config_hash", rec.config_hash}, {"config", rec.config}};
        write_checkpoint(out_dir / rel, make_checkpoint(enc, meta));
    };

    double best_rank = -1.0;
    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> perm = pool;
        std::shuffle(perm.begin(), perm.end(), std::mt19937_64(derive_seed({cfg.seed, 0x9e7ULL, static_cast<std::uint64_t>(epoch)})));
        double loss_sum = 0.0;
        for (std::int64_t b = 0; b < spe; ++b, ++step) {
            const auto begin = static_cast<std::size_t>(b * cfg.batch_size);
            const auto end = std::min<std::size_t>(begin + static_cast<std::size_t>(cfg.batch_size), perm.size());
            std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(begin), perm.begin() + static_cast<std::ptrdiff_t>(end));
            // A singleton tail batch borrows from the head of the permutation.
            for (std::size_t k = 0; idx.size() < 2; ++k) idx.push_back(perm[k]);

            const ViewTensorBatch batch = assemble_batch(data, idx, cfg.augment, cfg.seed, static_cast<std::uint64_t>(epoch));
            if (hooks.on_batch) hooks.on_batch(batch.provenance);

            const double lr = lr_at(step + 1, cfg, spe);
            for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
            opt.zero_grad();
            StepLoss l;
            try {
                l = compute_step_gradients(enc, batch, cfg, step);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::non_finite) throw;
                throw Error(ErrorCode::non_finite, failure_report(step, epoch + 1, lr, nullptr, e.what()));
            }
            bool finite = std::isfinite(l.total);
            for (const auto& [k, v] : l.terms) finite = finite && std::isfinite(v);
            require(finite, ErrorCode::non_finite, failure_report(step, epoch + 1, lr, &l, ""));
            opt.step();

            StepRecord s;
            s.step = step;
            s.epoch = epoch + 1;
            s.lr = lr;
            s.total = l.total;
            s.terms = l.terms;
            s.emb_var = embedding_diagnostics(l.z).dim_var;
            loss_sum += l.total;
            if (write) {
                json line = s.to_json();
                line["type"] = "step";
                metrics << line.dump() << '\n';
            }
            if (hooks.on_step) hooks.on_step(s);
            rec.steps.push_back(std::move(s));
        }

        EpochRecord er;
        er.epoch = epoch + 1;
        er.mean_loss = loss_sum / static_cast<double>(spe);
        er.diag = embedding_diagnostics(to_eigen(enc.encode(diag_inputs).z));
        enc.train(true);
        if (write) {
            if (cfg.checkpoint_every_epoch) {
                er.checkpoint = epoch_checkpoint_name(er.epoch);
                save(er.checkpoint, "epoch", step, er.epoch);
                rec.checkpoints.push_back(er.checkpoint);
            }
            if (er.diag.effective_rank > best_rank) {
                best_rank = er.diag.effective_rank;
                rec.best_checkpoint = "best.mjck";
                save(rec.best_checkpoint, "best", step, er.epoch);
            }
            json line = er.to_json();
            line["type"] = "epoch";
            metrics << line.dump() << '\n';
            metrics.flush();
        }
        if (hooks.on_epoch) hooks.on_epoch(er);
        rec.epochs.push_back(std::move(er));
        if (write) write_json(out_dir / "run.json", rec.to_json());
    }
    if (write) {
        rec.final_checkpoint = "final.mjck";
        save(rec.final_checkpoint, "final", step, cfg.epochs);
        write_json(out_dir / "run.json", rec.to_json());
    }
    return result;
}

} // namespace sonarssl
