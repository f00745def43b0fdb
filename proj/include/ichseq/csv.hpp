#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace ichseq::csv {

using Row = std::vector<std::string>;

// Quotes a field only when it contains a delimiter, quote or line break.
std::string escape(std::string_view field);
std::string join(const Row& fields);

// Parses one logical record. Handles quoted fields with embedded commas and
// doubled quotes; a quoted field may not span lines.
Row split(std::string_view line);

// Reads all records; strips a trailing '\r' and skips blank lines.
std::vector<Row> read_all(std::istream& in);
std::vector<Row> read_file(const std::string& path);

// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double v);
bool parse_double(std::string_view text, double& out);
bool parse_int(std::string_view text, long long& out);

}  // namespace ichseq::csv
