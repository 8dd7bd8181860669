#include "longmix/csv.hpp"

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "longmix/error.hpp"

namespace longmix::csv {

std::size_t Table::col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return i;
    }
    fail(ErrorCode::MissingColumn, "missing column: " + name);
}

bool Table::has_col(const std::string& name) const {
    for (const auto& h : header) {
        if (h == name) return true;
    }
    return false;
}

namespace {

// ---- record scanning -----------------------------------------------------

// Reads one logical CSV record (quotes may hide newlines). Returns false at
// end of input with no data consumed.
bool read_record(std::istream& in, std::vector<std::string>& fields) {
    fields.clear();
    std::string field;
    bool in_quotes = false;
    bool saw_any = false;
    int c;
    while ((c = in.get()) != std::char_traits<char>::eof()) {
        saw_any = true;
        char ch = static_cast<char>(c);
        if (in_quotes) {
            if (ch == '"') {
                if (in.peek() == '"') {
                    in.get();
                    field.push_back('"');
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(ch);
            }
            continue;
        }
        if (ch == '"') {
            in_quotes = true;
        } else if (ch == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (ch == '\n') {
            if (!field.empty() && field.back() == '\r') field.pop_back();
            fields.push_back(std::move(field));
            return true;
        } else {
            field.push_back(ch);
        }
    }
    if (!saw_any) return false;
    if (in_quotes) fail(ErrorCode::IoFailure, "unterminated quoted field at end of input");
    if (!field.empty() && field.back() == '\r') field.pop_back();
    fields.push_back(std::move(field));
    return true;
}

bool blank_record(const std::vector<std::string>& fields) {
    return fields.size() == 1 && fields[0].empty();
}

}  // namespace

Table read_stream(std::istream& in) {
    Table table;
    std::vector<std::string> fields;
    if (!read_record(in, table.header) || blank_record(table.header)) {
        fail(ErrorCode::EmptyInput, "csv input has no header row");
    }
    while (read_record(in, fields)) {
        if (blank_record(fields)) continue;  // tolerate trailing blank line
        if (fields.size() != table.header.size()) {
            std::ostringstream msg;
            msg << "csv row " << (table.rows.size() + 1) << " has " << fields.size()
                << " fields, expected " << table.header.size();
            fail(ErrorCode::IoFailure, msg.str());
        }
        table.rows.push_back(fields);
    }
    return table;
}

Table read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoFailure, "cannot open " + path + ": " + std::strerror(errno));
    return read_stream(in);
}

std::string escape_field(const std::string& field) {
    bool needs_quotes = field.find_first_of(",\"\n\r") != std::string::npos;
    if (!needs_quotes) return field;
    std::string out = "\"";
    for (char ch : field) {
        if (ch == '"') out += "\"\"";
        else out.push_back(ch);
    }
    out += "\"";
    return out;
}

namespace {

void write_stream(std::ostream& out, const Table& table) {
    for (std::size_t i = 0; i < table.header.size(); ++i) {
        if (i) out << ',';
        out << escape_field(table.header[i]);
    }
    out << '\n';
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            out << escape_field(row[i]);
        }
        out << '\n';
    }
}

}  // namespace

void write_file(const std::string& path, const Table& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::IoFailure, "cannot write " + path + ": " + std::strerror(errno));
    write_stream(out, table);
    out.flush();
    if (!out) fail(ErrorCode::IoFailure, "write failed for " + path);
}

void write_file_atomic(const std::string& path, const Table& table) {
    const std::string tmp = path + ".tmp";
    write_file(tmp, table);
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        fail(ErrorCode::IoFailure, "rename " + tmp + " -> " + path + ": " + std::strerror(errno));
    }
}

double to_double(const std::string& field, const std::string& col, std::size_t row) {
    const char* begin = field.c_str();
    char* end = nullptr;
    errno = 0;
    double value = std::strtod(begin, &end);
    if (end == begin || *end != '\0' || errno == ERANGE) {
        std::ostringstream msg;
        msg << "non-numeric value '" << field << "' in column " << col << ", data row " << row;
        fail(ErrorCode::NonNumericField, msg.str());
    }
    return value;
}

int to_int(const std::string& field, const std::string& col, std::size_t row) {
    const char* begin = field.c_str();
    char* end = nullptr;
    errno = 0;
    long value = std::strtol(begin, &end, 10);
    if (end == begin || *end != '\0' || errno == ERANGE || value > 2147483647L ||
        value < -2147483648L) {
        std::ostringstream msg;
        msg << "non-integer value '" << field << "' in column " << col << ", data row " << row;
        fail(ErrorCode::NonNumericField, msg.str());
    }
    return static_cast<int>(value);
}

}  // namespace longmix::csv
