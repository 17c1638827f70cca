#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace regisforge::text {

/// Joins parts with `sep`, backslash-escaping any `sep` or backslash inside
/// a part. `split_escaped` is the exact inverse.
std::string join_escaped(const std::vector<std::string>& parts, char sep);
std::vector<std::string> split_escaped(std::string_view joined, char sep);

/// Case-folds ASCII letters and collapses whitespace runs to one space,
/// trimming both ends.
std::string standardize(std::string_view s);

/// Shortest decimal rendering that round-trips to the same double.
std::string format_double(double v);

std::string_view trim(std::string_view s);

}  // namespace regisforge::text
