#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "simopt/errors.hpp"
#include "simopt/system.hpp"

namespace simopt {

/// Column-oriented numeric table, the in-memory form of the CSV datasets.
struct Table {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
  std::size_t cols() const { return names.size(); }

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return static_cast<int>(i);
    }
    return -1;
  }
  const std::vector<double>& column(const std::string& name) const {
    const int i = find(name);
    if (i < 0) throw InvalidInput("table has no column '" + name + "'");
    return columns[static_cast<std::size_t>(i)];
  }
  void add_column(std::string name, std::vector<double> values) {
    if (!columns.empty() && values.size() != rows()) throw InvalidInput("column length mismatch for " + name);
    names.push_back(std::move(name));
    columns.push_back(std::move(values));
  }
};

inline Table parse_csv(std::istream& in, const std::string& source = "csv") {
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput(source + ": empty file");
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
      t.names.push_back(cell);
    }
  }
  t.columns.resize(t.names.size());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      if (c >= t.names.size()) throw InvalidInput(source + ":" + std::to_string(lineno) + ": too many fields");
      try {
        t.columns[c].push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw InvalidInput(source + ":" + std::to_string(lineno) + ": non-numeric field '" + cell + "'");
      }
      ++c;
    }
    if (c != t.names.size()) throw InvalidInput(source + ":" + std::to_string(lineno) + ": too few fields");
  }
  return t;
}

inline Table read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path);
  return parse_csv(in, path);
}

inline void write_csv(std::ostream& os, const Table& t) {
  for (std::size_t c = 0; c < t.names.size(); ++c) os << (c ? "," : "") << t.names[c];
  os << '\n';
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) os << (c ? "," : "") << format_number(t.columns[c][r]);
    os << '\n';
  }
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = std::min(a.size(), b.size());
  if (n < 2) return 0.0;
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace simopt
