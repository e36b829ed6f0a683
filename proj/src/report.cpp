#include "report.hpp"

#include "common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <png.h>

namespace sonarssl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string field(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return "none";
    const auto& v = j.at(key);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number()) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", v.get<double>());
        return buf;
    }
    return v.dump();
}

std::string fmt(double v, int digits) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

struct Table {
    std::string name;
    std::string title;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string csv() const {
        std::ostringstream os;
        auto line = [&](const std::vector<std::string>& r) {
            for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << csv_escape(r[i]);
            os << "\n";
        };
        line(header);
        for (const auto& r : rows) line(r);
        return os.str();
    }

    std::string markdown() const {
        std::ostringstream os;
        os << "## " << title << "\n\n";
        if (rows.empty()) return os.str() + "No results.\n\n";
        auto line = [&](const std::vector<std::string>& r) {
            os << "|";
            for (const auto& c : r) os << " " << (c.empty() ? "n/a" : c) << " |";
            os << "\n";
        };
        line(header);
        os << "|";
        for (std::size_t i = 0; i < header.size(); ++i) os << "---|";
        os << "\n";
        for (const auto& r : rows) line(r);
        return os.str() + "\n";
    }
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
    out << text;
    require(static_cast<bool>(out), ErrorCode::io, "write failed for " + path.string());
}

// Best-scoring probe mode of one representation for one task.
const GridCell* best_mode(const ExperimentGrid& grid, const RepresentationKey& rep, const std::string& task) {
    const GridCell* best = nullptr;
    for (const auto& c : grid.cells()) {
        if (c.key.rep != rep || c.key.task != task) continue;
        if (!best || c.result.aggregate.at("macro_f1").mean > best->result.aggregate.at("macro_f1").mean) best = &c;
    }
    return best;
}

std::optional<MetricSummary> metric(const GridCell* cell, const std::string& key) {
    if (!cell) return std::nullopt;
    auto it = cell->result.aggregate.find(key);
    if (it == cell->result.aggregate.end()) return std::nullopt;
    return it->second;
}

std::string cell_text(const std::optional<MetricSummary>& m) { return m ? format_mean_std(*m) : ""; }

// Appends "*" to the maximal entries of column `col`, given numeric values per row.
void mark_best(Table& t, std::size_t col, const std::vector<std::optional<double>>& values) {
    std::optional<double> best;
    for (const auto& v : values) {
        if (v && (!best || *v > *best)) best = v;
    }
    if (!best) return;
    for (std::size_t r = 0; r < values.size(); ++r) {
        if (values[r] && *values[r] == *best) t.rows[r][col] += "*";
    }
}

std::string data_label(const std::string& mode) {
    if (mode == "real") return "Real";
    if (mode == "synthetic") return "Syn";
    if (mode == "real_plus_syn") return "Real+Syn";
    return "";
}

std::string source_of(const GridCell* c) { return c ? c->source : ""; }
std::string hash_of(const GridCell* c) { return c ? c->result.config_hash : ""; }

} // namespace

std::string RepresentationKey::label() const {
    if (objective == "none") return init == "random" ? "Random Init" : "Pretrained Init";
    if (objective == "sigreg") return "SIGReg";
    if (objective == "vicreg") return "VICReg";
    if (objective == "simclr") return "SimCLR";
    return objective;
}

RepresentationKey representation_key(const json& r) {
    RepresentationKey k;
    k.arch = field(r, "arch");
    k.init = field(r, "init");
    k.objective = field(r, "objective");
    k.augment = field(r, "augment");
    k.data_mode = field(r, "data_mode");
    k.lambda = field(r, "lambda");
    return k;
}

std::string CellKey::describe() const {
    return "arch=" + rep.arch + " init=" + rep.init + " objective=" + rep.objective + " augment=" + rep.augment + " data=" + rep.data_mode +
           " lambda=" + rep.lambda + " mode=" + mode + " task=" + task;
}

void ExperimentGrid::add(GridCell cell) {
    auto it = std::lower_bound(cells_.begin(), cells_.end(), cell.key,
                               [](const GridCell& c, const CellKey& k) { return c.key < k; });
    require_arg(it == cells_.end() || it->key != cell.key,
                "duplicate grid cell (" + cell.key.describe() + ") from " + cell.source + " and " +
                    (it == cells_.end() ? std::string() : it->source));
    cells_.insert(it, std::move(cell));
}

ExperimentGrid ExperimentGrid::load(const fs::path& dir) {
    require(fs::is_directory(dir), ErrorCode::not_found, "results directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    ExperimentGrid grid;
    for (const auto& f : files) {
        std::ifstream in(f);
        json j = json::parse(in, nullptr, false);
        if (j.is_discarded() || !j.is_object() || j.value("format", std::string()) != "sonarssl-probe-result") continue;
        GridCell cell;
        cell.result = ProbeResult::from_json(j);
        cell.source = fs::relative(f, dir).generic_string();
        cell.key.rep = representation_key(cell.result.representation);
        cell.key.mode = field(cell.result.config, "mode");
        cell.key.task = field(cell.result.config, "task");
        grid.add(std::move(cell));
    }
    return grid;
}

void ExperimentGrid::validate() const {
    for (const auto& c : cells_) {
        const auto expected = ProbeResult::compute_hash(c.result.config, c.result.representation);
        require(expected == c.result.config_hash, ErrorCode::hash_mismatch,
                "config hash mismatch in cell (" + c.key.describe() + ") from " + c.source + ": recorded " +
                    c.result.config_hash + ", computed " + expected);
        require(c.result.aggregate.count("macro_f1") == 1, ErrorCode::format,
                "cell (" + c.key.describe() + ") from " + c.source + " has no macro_f1 aggregate");
    }
}

const GridCell* ExperimentGrid::find(const CellKey& key) const {
    auto it = std::lower_bound(cells_.begin(), cells_.end(), key,
                               [](const GridCell& c, const CellKey& k) { return c.key < k; });
    return it != cells_.end() && it->key == key ? &*it : nullptr;
}

std::vector<RepresentationKey> ExperimentGrid::representations() const {
    std::set<RepresentationKey> reps;
    for (const auto& c : cells_) reps.insert(c.key.rep);
    return {reps.begin(), reps.end()};
}

std::string format_delta_points(double from, double to) {
    double d = std::round((to - from) * 1000.0) / 10.0;
    if (d == 0.0) d = 0.0; // no "-0.0"
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.1f", d);
    return buf;
}

std::string format_mean_std(const MetricSummary& s, int digits) {
    return fmt(s.mean, digits) + "±" + fmt(s.std, digits);
}

std::vector<fs::path> render_tables(const ExperimentGrid& grid, const fs::path& out_dir) {
    grid.validate();
    fs::create_directories(out_dir);
    const auto reps = grid.representations();
    std::vector<Table> tables;

    {
        Table t{"method_comparison", "Method comparison (3-class)",
                {"method", "arch", "init", "ssl_data", "lambda", "probe", "best_probe", "macro_f1", "nombo_f1",
                 "accuracy", "source", "config_hash"},
                {}};
        std::vector<std::optional<double>> f1s, nombo, acc;
        for (const auto& c : grid.cells()) {
            if (c.key.task != "three_class") continue;
            const auto* best = best_mode(grid, c.key.rep, "three_class");
            const auto m = metric(&c, "macro_f1"), n = metric(&c, "f1/NOMBO"), a = metric(&c, "accuracy");
            t.rows.push_back({c.key.rep.label(), c.key.rep.arch, c.key.rep.init, data_label(c.key.rep.data_mode),
                              c.key.rep.lambda == "none" ? "" : c.key.rep.lambda, c.key.mode,
                              best == &c ? "yes" : "", cell_text(m), cell_text(n), cell_text(a), c.source,
                              c.result.config_hash});
            f1s.push_back(m ? std::optional(m->mean) : std::nullopt);
            nombo.push_back(n ? std::optional(n->mean) : std::nullopt);
            acc.push_back(a ? std::optional(a->mean) : std::nullopt);
        }
        mark_best(t, 7, f1s);
        mark_best(t, 8, nombo);
        mark_best(t, 9, acc);
        tables.push_back(std::move(t));
    }
    {
        Table t{"model_comparison", "Model comparison (best probe per task)",
                {"method", "arch", "init", "ssl_data", "lambda", "params", "three_class_f1", "binary_f1",
                 "mine_recall", "three_class_source", "three_class_hash", "binary_source", "binary_hash"},
                {}};
        std::vector<std::optional<double>> f3, f2, rec;
        for (const auto& rep : reps) {
            const auto* c3 = best_mode(grid, rep, "three_class");
            const auto* c2 = best_mode(grid, rep, "binary");
            std::string params;
            for (const auto* c : {c3, c2}) {
                if (c && c->result.representation.contains("params")) params = field(c->result.representation, "params");
            }
            const auto m3 = metric(c3, "macro_f1"), m2 = metric(c2, "macro_f1"), r = metric(c2, "recall/mine");
            t.rows.push_back({rep.label(), rep.arch, rep.init, data_label(rep.data_mode),
                              rep.lambda == "none" ? "" : rep.lambda, params, cell_text(m3), cell_text(m2),
                              r ? fmt(100.0 * r->mean, 1) + "±" + fmt(100.0 * r->std, 1) : "", source_of(c3),
                              hash_of(c3), source_of(c2), hash_of(c2)});
            f3.push_back(m3 ? std::optional(m3->mean) : std::nullopt);
            f2.push_back(m2 ? std::optional(m2->mean) : std::nullopt);
            rec.push_back(r ? std::optional(r->mean) : std::nullopt);
        }
        mark_best(t, 6, f3);
        mark_best(t, 7, f2);
        mark_best(t, 8, rec);
        tables.push_back(std::move(t));
    }
    {
        Table t{"ablation", "Ablation (3-class, delta vs preceding row in points)",
                {"config", "arch", "init", "augment", "ssl_data", "lambda", "probe", "macro_f1", "delta", "source", "config_hash"},
                {}};
        std::vector<std::optional<double>> f1s;
        const GridCell* prev = nullptr;
        for (const auto& rep : reps) {
            const auto* c = best_mode(grid, rep, "three_class");
            if (!c) continue;
            const double mean = c->result.aggregate.at("macro_f1").mean;
            t.rows.push_back({rep.label(), rep.arch, rep.init, rep.augment == "none" ? "" : rep.augment,
                              data_label(rep.data_mode), rep.lambda == "none" ? "" : rep.lambda, c->key.mode,
                              format_mean_std(c->result.aggregate.at("macro_f1")),
                              prev ? format_delta_points(prev->result.aggregate.at("macro_f1").mean, mean) : "",
                              c->source, c->result.config_hash});
            f1s.push_back(mean);
            prev = c;
        }
        mark_best(t, 7, f1s);
        tables.push_back(std::move(t));
    }
    {
        Table t{"data_scalability", "Data scalability (3-class, delta = Real+Syn - Real in points)",
                {"method", "arch", "init", "lambda", "proj_dim", "real", "real_plus_syn", "delta", "real_source",
                 "real_hash", "real_plus_syn_source", "real_plus_syn_hash"},
                {}};
        std::vector<std::optional<double>> real, mixed;
        std::set<RepresentationKey> groups;
        for (auto rep : reps) {
            if (rep.objective == "none") continue;
            rep.data_mode = "none";
            groups.insert(rep);
        }
        for (const auto& g : groups) {
            RepresentationKey kr = g, km = g;
            kr.data_mode = "real";
            km.data_mode = "real_plus_syn";
            const auto* cr = best_mode(grid, kr, "three_class");
            const auto* cm = best_mode(grid, km, "three_class");
            if (!cr && !cm) continue;
            std::string proj;
            for (const auto* c : {cr, cm}) {
                if (c && c->result.representation.contains("proj_dim")) proj = field(c->result.representation, "proj_dim");
            }
            const auto mr = metric(cr, "macro_f1"), mm = metric(cm, "macro_f1");
            t.rows.push_back({g.label(), g.arch, g.init, g.lambda == "none" ? "" : g.lambda, proj, cell_text(mr),
                              cell_text(mm), mr && mm ? format_delta_points(mr->mean, mm->mean) : "", source_of(cr),
                              hash_of(cr), source_of(cm), hash_of(cm)});
            real.push_back(mr ? std::optional(mr->mean) : std::nullopt);
            mixed.push_back(mm ? std::optional(mm->mean) : std::nullopt);
        }
        mark_best(t, 5, real);
        mark_best(t, 6, mixed);
        tables.push_back(std::move(t));
    }

    std::vector<fs::path> written;
    std::string summary = "# Results\n\nCells are mean±std over probe seeds. `*` marks the best value in a column. "
                          "Empty cells have no result.\n\n";
    for (const auto& t : tables) {
        const auto path = out_dir / (t.name + ".csv");
        write_text(path, t.csv());
        written.push_back(path);
        summary += t.markdown();
    }
    const auto md = out_dir / "summary.md";
    write_text(md, summary);
    written.push_back(md);
    return written;
}

namespace {

struct Canvas {
    CurveImage img;
    Canvas(int w, int h) {
        img.width = w;
        img.height = h;
        img.rgb.assign(static_cast<std::size_t>(w) * h * 3, 255);
    }
    void set(int x, int y, const std::uint8_t* c) {
        if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
        auto* p = &img.rgb[(static_cast<std::size_t>(y) * img.width + x) * 3];
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }
    void line(int x0, int y0, int x1, int y1, const std::uint8_t* c) {
        const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
        const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        for (;;) {
            set(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }
    void rect(int x0, int y0, int x1, int y1, const std::uint8_t* c) {
        line(x0, y0, x1, y0, c);
        line(x1, y0, x1, y1, c);
        line(x1, y1, x0, y1, c);
        line(x0, y1, x0, y0, c);
    }
};

constexpr std::uint8_t kPalette[][3] = {{31, 119, 180}, {44, 160, 44}, {148, 103, 189}, {255, 127, 14},
                                        {23, 190, 207}, {140, 86, 75},  {127, 127, 127}};
constexpr std::uint8_t kFrame[3] = {60, 60, 60};
constexpr std::uint8_t kGuide[3] = {225, 225, 225};

struct Panel {
    int x0, y0, x1, y1;
};

void draw_series(Canvas& cv, const Panel& p, const std::vector<double>& xs, const std::vector<std::vector<double>>& series) {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& s : series) {
        for (double v : s) {
            if (std::isfinite(v)) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
    }
    if (!std::isfinite(lo)) return;
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    auto py = [&](double v) { return p.y1 - 2 - static_cast<int>(std::lround((v - lo) / (hi - lo) * (p.y1 - p.y0 - 4))); };
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto* color = kPalette[k % std::size(kPalette)];
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const int x = static_cast<int>(std::lround(xs[i]));
            if (i == 0) {
                cv.set(x, py(series[k][i]), color);
            } else {
                cv.line(static_cast<int>(std::lround(xs[i - 1])), py(series[k][i - 1]), x, py(series[k][i]), color);
            }
        }
    }
}

} // namespace

CurveImage plot_run(const RunRecord& record, int width, int height) {
    require_arg(!record.steps.empty(), "run record has no steps");
    require_arg(width >= 100 && height >= 100, "plot is too small");
    Canvas cv(width, height);
    const Panel top{40, 14, width - 10, height / 2 - 6};
    const Panel bottom{40, height / 2 + 6, width - 10, height - 14};

    const double s0 = static_cast<double>(record.steps.front().step);
    const double s1 = static_cast<double>(record.steps.back().step);
    auto px = [&](double s) {
        if (s1 <= s0) return (top.x0 + top.x1) / 2.0;
        return top.x0 + 2 + (s - s0) / (s1 - s0) * (top.x1 - top.x0 - 4);
    };

    std::vector<double> xs;
    std::vector<std::string> names{"total"};
    for (const auto& [k, unused] : record.steps.front().terms) names.push_back(k);
    std::vector<std::vector<double>> losses(names.size()), variance(1);
    for (const auto& s : record.steps) {
        xs.push_back(px(static_cast<double>(s.step)));
        losses[0].push_back(s.total);
        for (std::size_t k = 1; k < names.size(); ++k) {
            auto it = s.terms.find(names[k]);
            losses[k].push_back(it == s.terms.end() ? NAN : it->second);
        }
        double v = 0.0;
        for (double e : s.emb_var) v += e;
        variance[0].push_back(s.emb_var.empty() ? NAN : v / static_cast<double>(s.emb_var.size()));
    }

    std::map<int, std::int64_t> epoch_end;
    for (const auto& s : record.steps) epoch_end[s.epoch] = std::max(epoch_end[s.epoch], s.step);
    for (const auto& [epoch, step] : epoch_end) {
        const int x = static_cast<int>(std::lround(px(static_cast<double>(step))));
        cv.img.epoch_marker_x.push_back(x);
        for (const auto& p : {top, bottom}) {
            for (int y = p.y0 + 1; y < p.y1; y += 3) cv.set(x, y, kGuide);
        }
        for (int dy = 0; dy < 8; ++dy) {
            const int half = (8 - dy) / 4;
            for (int dx = -half; dx <= half; ++dx) cv.set(x + dx, 1 + dy, kMarkerColor);
        }
    }
    cv.rect(top.x0, top.y0, top.x1, top.y1, kFrame);
    cv.rect(bottom.x0, bottom.y0, bottom.x1, bottom.y1, kFrame);
    draw_series(cv, top, xs, losses);
    draw_series(cv, bottom, xs, variance);
    // Legend swatches, one per loss series, down the left margin.
    for (std::size_t k = 0; k < names.size(); ++k) {
        for (int y = 0; y < 6; ++y) {
            for (int x = 0; x < 12; ++x) cv.set(14 + x, top.y0 + 4 + static_cast<int>(k) * 10 + y, kPalette[k % std::size(kPalette)]);
        }
    }
    return cv.img;
}

void write_png(const fs::path& path, const CurveImage& image) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = PNG_FORMAT_RGB;
    const bool ok = png_image_write_to_file(&png, path.string().c_str(), 0, image.rgb.data(), 0, nullptr) != 0;
    const std::string msg = png.message;
    png_image_free(&png);
    require(ok, ErrorCode::io, "cannot write PNG " + path.string() + ": " + msg);
}

CurveImage read_png(const fs::path& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    require(png_image_begin_read_from_file(&png, path.string().c_str()) != 0, ErrorCode::io,
            "cannot read PNG " + path.string() + ": " + png.message);
    png.format = PNG_FORMAT_RGB;
    CurveImage img;
    img.width = static_cast<int>(png.width);
    img.height = static_cast<int>(png.height);
    img.rgb.resize(PNG_IMAGE_SIZE(png));
    const bool ok = png_image_finish_read(&png, nullptr, img.rgb.data(), 0, nullptr) != 0;
    const std::string msg = png.message;
    png_image_free(&png);
    require(ok, ErrorCode::io, "cannot decode PNG " + path.string() + ": " + msg);
    return img;
}

std::vector<fs::path> render_curves(const std::vector<std::pair<std::string, RunRecord>>& runs, const fs::path& out_dir) {
    require_arg(!runs.empty(), "no run records to plot");
    fs::create_directories(out_dir);
    std::vector<fs::path> out;
    for (const auto& [name, record] : runs) {
        require_arg(!record.steps.empty(), "run record '" + name + "' has no steps");
        const auto path = out_dir / (name + ".png");
        write_png(path, plot_run(record));
        out.push_back(path);
    }
    return out;
}

} // namespace sonarssl
