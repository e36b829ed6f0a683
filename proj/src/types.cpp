#include "types.hpp"

#include "common.hpp"

namespace sonarssl {

std::string_view to_string(Label label) {
    switch (label) {
    case Label::bg: return "BG";
    case Label::milco: return "MILCO";
    case Label::nombo: return "NOMBO";
    }
    return "?";
}

std::string_view to_string(Subset subset) {
    return subset == Subset::real ? "real" : "synthetic";
}

std::string_view to_string(Split split) {
    switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "?";
}

Label parse_label(std::string_view text) {
    if (text == "BG") return Label::bg;
    if (text == "MILCO") return Label::milco;
    if (text == "NOMBO") return Label::nombo;
    throw Error(ErrorCode::format, "unknown label '" + std::string(text) + "'");
}

Subset parse_subset(std::string_view text) {
    if (text == "real") return Subset::real;
    if (text == "synthetic") return Subset::synthetic;
    throw Error(ErrorCode::format, "unknown subset '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "val") return Split::val;
    if (text == "test") return Split::test;
    throw Error(ErrorCode::format, "unknown split '" + std::string(text) + "'");
}

} // namespace sonarssl
