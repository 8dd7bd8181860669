#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace longmix::csv {

// Minimal RFC-4180-ish CSV layer: comma separator, double-quote quoting with
// "" escapes, \n or \r\n records. Quotes are required on write whenever a
// field contains a comma, quote, or newline.

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    // Index of a named column; throws if absent.
    std::size_t col(const std::string& name) const;
    bool has_col(const std::string& name) const;
};

Table read_file(const std::string& path);
Table read_stream(std::istream& in);

std::string escape_field(const std::string& field);
void write_file(const std::string& path, const Table& table);

// Atomic variant: writes to <path>.tmp in the same directory, then renames.
void write_file_atomic(const std::string& path, const Table& table);

// Parse helpers with location-aware errors ("row" is 1-based data row).
double to_double(const std::string& field, const std::string& col, std::size_t row);
int to_int(const std::string& field, const std::string& col, std::size_t row);

}  // namespace longmix::csv
