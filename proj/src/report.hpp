#pragma once

// Result tables and training-curve plots.

#include "probe.hpp"
#include "trainer.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace sonarssl {

/// Representation axes of one probed backbone, read from the result's
/// representation block. Absent fields are "none".
struct RepresentationKey {
    std::string arch = "none";
    std::string init = "none";      // random | external
    std::string objective = "none"; // none | sigreg | vicreg | simclr
    std::string augment = "none";
    std::string data_mode = "none"; // none | real | synthetic | real_plus_syn
    std::string lambda = "none";    // %g formatted
    auto operator<=>(const RepresentationKey&) const = default;
    std::string label() const;
};

RepresentationKey representation_key(const nlohmann::json& representation);

struct CellKey {
    RepresentationKey rep;
    std::string mode;
    std::string task;
    auto operator<=>(const CellKey&) const = default;
    std::string describe() const;
};

struct GridCell {
    CellKey key;
    ProbeResult result;
    std::string source; // result file path
};

class ExperimentGrid {
public:
    /// Adds a cell; a duplicate key is an error.
    void add(GridCell cell);
    /// Loads every probe result (`*.json` with the probe-result format) under `dir`, recursively.
    static ExperimentGrid load(const std::filesystem::path& dir);

    /// Recomputes each cell's config hash; throws naming the first mismatching cell.
    void validate() const;

    const std::vector<GridCell>& cells() const { return cells_; } // sorted by key
    const GridCell* find(const CellKey& key) const;
    std::vector<RepresentationKey> representations() const;

private:
    std::vector<GridCell> cells_;
};

/// Signed difference in percentage points, e.g. "+2.1" or "-0.5".
std::string format_delta_points(double from, double to);
std::string format_mean_std(const MetricSummary& s, int digits = 3);

/// Writes method_comparison.csv, model_comparison.csv, ablation.csv,
/// data_scalability.csv and summary.md. Returns the written paths.
std::vector<std::filesystem::path> render_tables(const ExperimentGrid& grid, const std::filesystem::path& out_dir);

struct CurveImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;
    std::vector<int> epoch_marker_x;
};

inline constexpr std::uint8_t kMarkerColor[3] = {200, 30, 30};
inline constexpr int kMarkerRow = 4;

/// Loss components (top) and mean embedding variance (bottom) against step,
/// with one marker per epoch end in the top strip.
CurveImage plot_run(const RunRecord& record, int width = 800, int height = 600);
void write_png(const std::filesystem::path& path, const CurveImage& image);
CurveImage read_png(const std::filesystem::path& path);

/// One PNG per record, named `<name>.png`. Throws on an empty list or a record without steps.
std::vector<std::filesystem::path> render_curves(const std::vector<std::pair<std::string, RunRecord>>& runs,
                                                 const std::filesystem::path& out_dir);

} // namespace sonarssl
