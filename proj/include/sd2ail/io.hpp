#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "sd2ail/common.hpp"

namespace sd2ail::io {

/// Decimal text with 17 significant digits; parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text);

std::vector<std::string> split(std::string_view line, char sep);

/// Writes a file by streaming into a sibling temporary and renaming it into
/// place, so a failure never leaves a partial file behind.
void write_atomically(const std::filesystem::path& path,
                      const std::function<void(std::ostream&)>& writer);

/// Whitespace-separated matrix dump: "rows cols" then values, row-major.
void write_matrix(std::ostream& os, const Matrix& m);
Matrix read_matrix(std::istream& is);

/// Reads one whitespace-delimited token and checks it equals `expected`.
void expect_token(std::istream& is, std::string_view expected);

}  // namespace sd2ail::io
