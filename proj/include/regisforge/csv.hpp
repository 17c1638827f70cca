#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace regisforge::csv {

/// RFC 4180-style table: quoted fields may hold commas, quotes and newlines.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Column index by name, or nullopt.
    std::optional<std::size_t> column(std::string_view name) const;
};

Table parse(std::string_view content);

/// Reads a UTF-8 CSV with a mandatory header row. Lines starting with `#`
/// before the header are skipped (used for descriptor header blocks).
Table read_file(const std::filesystem::path& path);

std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace regisforge::csv
