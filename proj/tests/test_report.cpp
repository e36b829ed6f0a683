#include "common.hpp"
#include "report.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace sonarssl;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("sonarssl_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json rep(const std::string& objective, const std::string& data_mode, double lambda = 0.1) {
    json r{{"arch", "vit_tiny"}, {"init", "random"}, {"objective", objective}, {"augment", "sss_adapted"},
           {"data_mode", data_mode}, {"proj_dim", 16}};
    r["lambda"] = objective == "sigreg" ? json(lambda) : json(nullptr);
    return r;
}

GridCell make_cell(const json& representation, const std::string& mode, const std::string& task, double f1_a,
                   double f1_b, const std::string& source) {
    ProbeConfig cfg;
    cfg.mode = parse_probe_mode(mode);
    cfg.task = parse_task(task);
    cfg.seeds = {0, 1};
    ProbeResult r;
    r.config = cfg.to_json();
    r.representation = representation;
    r.config_hash = ProbeResult::compute_hash(r.config, r.representation);
    r.class_names = class_names(cfg.task);
    std::vector<std::map<std::string, double>> recs;
    for (double f : {f1_a, f1_b}) {
        SeedMetrics m;
        m.macro_f1 = f;
        m.accuracy = f;
        m.class_f1.assign(r.class_names.size(), f);
        m.class_recall.assign(r.class_names.size(), f);
        m.confusion = ConfusionMatrix(static_cast<int>(r.class_names.size()));
        m.confusion.at(0, 0) = 1;
        m.seed = r.seeds.size();
        recs.push_back(m.scalars(r.class_names));
        r.seeds.push_back(m);
    }
    r.aggregate = aggregate_seeds(recs);
    GridCell c;
    c.result = r;
    c.source = source;
    c.key.rep = representation_key(representation);
    c.key.mode = mode;
    c.key.task = task;
    return c;
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(slurp(p));
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(cells);
    }
    return rows;
}

RunRecord fake_run(int epochs, int steps_per_epoch) {
    RunRecord r;
    std::int64_t step = 0;
    for (int e = 1; e <= epochs; ++e) {
        for (int k = 0; k < steps_per_epoch; ++k, ++step) {
            StepRecord s;
            s.step = step;
            s.epoch = e;
            s.total = 1.0 / static_cast<double>(step + 1);
            s.terms = {{"invariance", 0.5 / static_cast<double>(step + 1)}, {"sigreg", 0.2}};
            s.emb_var = {1.0, 0.5 + 0.01 * static_cast<double>(step)};
            r.steps.push_back(s);
        }
    }
    return r;
}

int count_markers(const CurveImage& img) {
    int runs = 0;
    bool inside = false;
    for (int x = 0; x < img.width; ++x) {
        const auto* p = &img.rgb[(static_cast<std::size_t>(kMarkerRow) * img.width + x) * 3];
        const bool hit = p[0] == kMarkerColor[0] && p[1] == kMarkerColor[1] && p[2] == kMarkerColor[2];
        if (hit && !inside) ++runs;
        inside = hit;
    }
    return runs;
}

} // namespace

TEST_SUITE("report") {

TEST_CASE("delta formatting") {
    CHECK(format_delta_points(0.799, 0.820) == "+2.1");
    CHECK(format_delta_points(0.820, 0.799) == "-2.1");
    CHECK(format_delta_points(0.5, 0.5) == "+0.0");
    CHECK(format_delta_points(0.5, 0.49999) == "+0.0");
    CHECK(format_mean_std({0.82, 0.018}) == "0.820±0.018");
}

TEST_CASE("single cell gives single rows without deltas") {
    const auto dir = scratch("report_single");
    ExperimentGrid grid;
    grid.add(make_cell(rep("sigreg", "real"), "linear", "three_class", 0.7, 0.8, "a.json"));
    render_tables(grid, dir);
    const auto method = csv_rows(dir / "method_comparison.csv");
    REQUIRE(method.size() == 2);
    CHECK(method[1][0] == "SIGReg");
    CHECK(method[1][6] == "yes");
    CHECK(method[1][7] == "0.750±0.071*");
    CHECK(method[1][10] == "a.json");
    const auto ablation = csv_rows(dir / "ablation.csv");
    REQUIRE(ablation.size() == 2);
    CHECK(ablation[1][8].empty());
    const auto scal = csv_rows(dir / "data_scalability.csv");
    REQUIRE(scal.size() == 2);
    CHECK(scal[1][7].empty());
    CHECK(fs::exists(dir / "summary.md"));
    CHECK(fs::exists(dir / "model_comparison.csv"));
}

TEST_CASE("real versus real plus synthetic delta") {
    const auto dir = scratch("report_delta");
    ExperimentGrid grid;
    grid.add(make_cell(rep("sigreg", "real"), "finetune", "three_class", 0.799, 0.799, "real.json"));
    grid.add(make_cell(rep("sigreg", "real_plus_syn"), "finetune", "three_class", 0.820, 0.820, "mixed.json"));
    render_tables(grid, dir);
    const auto scal = csv_rows(dir / "data_scalability.csv");
    REQUIRE(scal.size() == 2);
    CHECK(scal[1][5] == "0.799±0.000*");
    CHECK(scal[1][6] == "0.820±0.000*");
    CHECK(scal[1][7] == "+2.1");
    CHECK(scal[1][8] == "real.json");
    CHECK(scal[1][10] == "mixed.json");
}

TEST_CASE("output does not depend on insertion order") {
    std::vector<GridCell> cells{
        make_cell(rep("sigreg", "real"), "linear", "three_class", 0.6, 0.62, "r/1.json"),
        make_cell(rep("sigreg", "real"), "finetune", "three_class", 0.7, 0.71, "r/2.json"),
        make_cell(rep("sigreg", "real_plus_syn"), "finetune", "three_class", 0.72, 0.75, "r/3.json"),
        make_cell(rep("sigreg", "real", 0.0), "finetune", "three_class", 0.4, 0.41, "r/4.json"),
        make_cell(rep("vicreg", "real"), "mlp", "three_class", 0.65, 0.66, "r/5.json"),
        make_cell(rep("sigreg", "real"), "finetune", "binary", 0.9, 0.91, "r/6.json"),
        make_cell(json{{"arch", "vit_tiny"}, {"init", "random"}}, "linear", "three_class", 0.5, 0.52, "r/7.json"),
    };
    const auto a = scratch("report_order_a"), b = scratch("report_order_b");
    ExperimentGrid ga, gb;
    for (const auto& c : cells) ga.add(c);
    auto shuffled = cells;
    std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(3));
    for (const auto& c : shuffled) gb.add(c);
    const auto files = render_tables(ga, a);
    render_tables(gb, b);
    CHECK(files.size() == 5);
    for (const auto& f : files) CHECK(slurp(f) == slurp(b / f.filename()));
    CHECK_THROWS_AS(ga.add(cells[0]), Error);

    const auto ablation = csv_rows(a / "ablation.csv");
    CHECK(ablation.size() == 1 + 5);
    const auto method = csv_rows(a / "method_comparison.csv");
    CHECK(method.size() == 1 + 6);
}

TEST_CASE("grid loading and hash validation") {
    const auto dir = scratch("report_load");
    auto cell = make_cell(rep("sigreg", "real"), "linear", "three_class", 0.6, 0.7, "");
    fs::create_directories(dir / "nested");
    std::ofstream(dir / "nested" / "ok.json") << cell.result.to_json().dump(2);
    std::ofstream(dir / "other.json") << R"({"format": "something-else"})";
    auto grid = ExperimentGrid::load(dir);
    REQUIRE(grid.cells().size() == 1);
    CHECK(grid.cells()[0].source == "nested/ok.json");
    CHECK_NOTHROW(grid.validate());

    auto tampered = cell.result.to_json();
    tampered["representation"]["lambda"] = 0.5;
    std::ofstream(dir / "bad.json") << tampered.dump(2);
    grid = ExperimentGrid::load(dir);
    try {
        grid.validate();
        FAIL("expected a hash mismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::hash_mismatch);
        CHECK(std::string(e.what()).find("bad.json") != std::string::npos);
        CHECK(std::string(e.what()).find("lambda=0.5") != std::string::npos);
    }
    CHECK_THROWS_AS(render_tables(grid, scratch("report_bad_out")), Error);
}

TEST_CASE("training curves") {
    const auto run = fake_run(5, 4);
    const auto img = plot_run(run);
    CHECK(img.width == 800);
    CHECK(img.height == 600);
    CHECK(img.epoch_marker_x.size() == 5);
    CHECK(count_markers(img) == 5);
    CHECK(plot_run(fake_run(5, 4)).rgb == img.rgb);

    const auto dir = scratch("report_curves");
    const auto files = render_curves({{"smoke", run}, {"copy", fake_run(5, 4)}}, dir);
    REQUIRE(files.size() == 2);
    CHECK(files[0].filename() == "smoke.png");
    const auto back = read_png(files[0]);
    CHECK(back.width == img.width);
    CHECK(back.rgb == img.rgb);
    CHECK(read_png(files[1]).rgb == back.rgb);
    CHECK(count_markers(back) == 5);

    CHECK_THROWS_AS(render_curves({}, dir), Error);
    CHECK_THROWS_AS(render_curves({{"empty", RunRecord{}}}, dir), Error);
}

}
