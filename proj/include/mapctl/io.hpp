#ifndef MAPCTL_IO_HPP
#define MAPCTL_IO_HPP

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mapctl::io {

/// Shortest decimal text that parses back to the same double; "nan" for NaN.
std::string format_double(double value);

/// Header plus numeric rows. Empty cells and "nan" parse as NaN.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    /// Index of a named column, or -1.
    int column(std::string_view name) const;
};

CsvTable read_csv(const std::string& path);
CsvTable parse_csv(std::string_view text, const std::string& origin = "<memory>");
void write_csv(const std::string& path, const CsvTable& table);
std::string to_csv_text(const CsvTable& table);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

/// FNV-1a over the given bytes.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 14695981039346656037ull);
std::string hex64(std::uint64_t value);

}  // namespace mapctl::io

#endif  // MAPCTL_IO_HPP
