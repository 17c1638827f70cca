#pragma once

#include <optional>
#include <string>
#include <vector>

namespace timeline_cases {

/// One hand-worked timeline: values in event order ("-" is missing) and the
/// expected rates as exact fractions.
struct Case {
    std::vector<std::string> values;
    int changes;
    int pairs;
    int missing;
};

inline const std::vector<Case>& table() {
    static const std::vector<Case> cases = {
        {{"A"}, 0, 0, 0},
        {{"-"}, 0, 0, 1},
        {{"-", "-", "-"}, 0, 0, 3},
        {{"A", "A", "B"}, 1, 2, 0},
        {{"A", "-", "B"}, 1, 1, 1},
        {{"A", "A", "A", "A"}, 0, 3, 0},
        {{"A", "B", "A", "B"}, 3, 3, 0},
        {{"A", "B"}, 1, 1, 0},
        {{"A", "A"}, 0, 1, 0},
        {{"-", "A"}, 0, 0, 1},
        {{"A", "-"}, 0, 0, 1},
        {{"A", "-", "A"}, 0, 1, 1},
        {{"A", "B", "B", "C"}, 2, 3, 0},
        {{"-", "A", "-", "B", "-"}, 1, 1, 3},
        {{"A", "A", "-", "-", "A"}, 0, 2, 2},
        {{"A", "B", "C", "D", "E"}, 4, 4, 0},
        {{"A", "A", "B", "B", "-", "B"}, 1, 4, 1},
        {{"A", "B", "B", "B", "B", "B", "B", "B", "B", "A"}, 2, 9, 0},
        {{"-", "-", "A", "A", "B", "-", "-", "-"}, 1, 2, 5},
        {{"A", "A", "A", "B", "-", "B", "B", "C", "-", "-"}, 2, 6, 3},
    };
    return cases;
}

inline std::vector<std::optional<std::string>> as_values(const Case& c) {
    std::vector<std::optional<std::string>> out;
    for (const auto& v : c.values) out.push_back(v == "-" ? std::nullopt : std::optional<std::string>(v));
    return out;
}

inline double expected_change(const Case& c) {
    return c.pairs == 0 ? 0.0 : static_cast<double>(c.changes) / static_cast<double>(c.pairs);
}

inline double expected_missing(const Case& c) {
    return static_cast<double>(c.missing) / static_cast<double>(c.values.size());
}

}  // namespace timeline_cases
