#pragma once

#include "image.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace sonarssl {

inline constexpr int kPatchSize = 96;

/// Patch taxonomy. Numeric values are the class indices used by probes.
enum class Label : int { bg = 0, milco = 1, nombo = 2 };
inline constexpr int kNumClasses = 3;

enum class Subset { real, synthetic };

enum class Split { train, val, test };

std::string_view to_string(Label label);
std::string_view to_string(Subset subset);
std::string_view to_string(Split split);
Label parse_label(std::string_view text);
Subset parse_subset(std::string_view text);
Split parse_split(std::string_view text);

/// Half-open pixel box [row0, row1) x [col0, col1).
struct Box {
    int row0 = 0;
    int col0 = 0;
    int row1 = 0;
    int col1 = 0;

    bool empty() const { return row1 <= row0 || col1 <= col0; }
    bool intersects(const Box& o) const {
        return row0 < o.row1 && o.row0 < row1 && col0 < o.col1 && o.col0 < col1;
    }
    bool operator==(const Box&) const = default;
};

struct Annotation {
    Label label = Label::milco;
    Box box;
    bool operator==(const Annotation&) const = default;
};

/// One 96x96 image patch with provenance.
struct PatchTensor {
    Image pixels;
    std::string source_id;
    int row = 0;
    int col = 0;
    Subset subset = Subset::real;
};

struct LabeledPatch {
    PatchTensor patch;
    Label label = Label::bg;
};

} // namespace sonarssl
