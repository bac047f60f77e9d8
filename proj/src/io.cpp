#include "sd2ail/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>

namespace sd2ail::io {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(std::string_view text) {
  std::string s(text);
  if (s == "nan") return std::nan("");
  if (s == "inf") return HUGE_VAL;
  if (s == "-inf") return -HUGE_VAL;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw std::runtime_error("malformed number '" + s + "'");
  return v;
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

void write_atomically(const std::filesystem::path& path,
                      const std::function<void(std::ostream&)>& writer) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    try {
      writer(os);
    } catch (...) {
      os.close();
      std::filesystem::remove(tmp);
      throw;
    }
    os.flush();
    if (!os) {
      os.close();
      std::filesystem::remove(tmp);
      throw std::runtime_error("write failed for " + path.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

void write_matrix(std::ostream& os, const Matrix& m) {
  os << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ' ';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

Matrix read_matrix(std::istream& is) {
  Eigen::Index rows = 0, cols = 0;
  if (!(is >> rows >> cols) || rows < 0 || cols < 0)
    throw std::runtime_error("malformed matrix header");
  Matrix m(rows, cols);
  std::string tok;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!(is >> tok)) throw std::runtime_error("truncated matrix data");
      m(i, j) = parse_double(tok);
    }
  return m;
}

void expect_token(std::istream& is, std::string_view expected) {
  std::string tok;
  if (!(is >> tok) || tok != expected)
    throw std::runtime_error("expected '" + std::string(expected) + "', got '" + tok + "'");
}

}  // namespace sd2ail::io
