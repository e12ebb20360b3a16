#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace resyn::csv {

using Row = std::vector<std::string>;

// RFC 4180 parser: comma-delimited, double-quote quoting with "" escapes,
// accepts LF and CRLF line endings. Throws std::runtime_error on malformed
// quoting, with a line number in the message.
std::vector<Row> parse(std::string_view text);
std::vector<Row> read_file(const std::string& path);

// Fields are quoted only when they contain a comma, quote or newline.
// Lines are terminated with LF for byte-stable output.
std::string to_string(const std::vector<Row>& rows);
void write_file(const std::string& path, const std::vector<Row>& rows);

}  // namespace resyn::csv
