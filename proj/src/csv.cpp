#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "foogd/workbench.hpp"

namespace foogd {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

CsvTable load_csv(const std::string& path, bool require_labels) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("load_csv: empty file " + path);

  auto header = split_line(line);
  bool has_labels = !header.empty() && header.back() == "label";
  std::size_t d = header.size() - (has_labels ? 1 : 0);
  if (d == 0) throw std::runtime_error("load_csv: no feature columns in " + path);
  for (std::size_t i = 0; i < d; ++i)
    if (header[i] != "x" + std::to_string(i))
      throw std::runtime_error("load_csv: bad header column '" + header[i] +
                               "' in " + path);
  if (require_labels && !has_labels)
    throw std::runtime_error("load_csv: missing label column in " + path);

  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t rows = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error("load_csv: ragged row at line " +
                               std::to_string(lineno) + " in " + path);
    for (std::size_t i = 0; i < d; ++i) {
      try {
        values.push_back(std::stod(cells[i]));
      } catch (const std::exception&) {
        throw std::runtime_error("load_csv: malformed number at line " +
                                 std::to_string(lineno) + " in " + path);
      }
    }
    if (has_labels) {
      try {
        labels.push_back(static_cast<std::size_t>(std::stoul(cells[d])));
      } catch (const std::exception&) {
        throw std::runtime_error("load_csv: malformed label at line " +
                                 std::to_string(lineno) + " in " + path);
      }
    }
    ++rows;
  }
  if (rows == 0) throw std::runtime_error("load_csv: no data rows in " + path);
  CsvTable t;
  t.X = Tensor({rows, d}, std::move(values));
  t.labels = std::move(labels);
  t.has_labels = has_labels;
  return t;
}

void save_csv(const std::string& path, const Tensor& X,
              const std::vector<std::size_t>* labels) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv: cannot write " + path);
  std::size_t d = X.cols();
  for (std::size_t i = 0; i < d; ++i) out << (i ? ",x" : "x") << i;
  if (labels) out << ",label";
  out << "\n";
  char buf[40];
  for (std::size_t i = 0; i < X.rows(); ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", X.at(i, c));
      if (c) out << ",";
      out << buf;
    }
    if (labels) out << "," << (*labels)[i];
    out << "\n";
  }
}

}  // namespace foogd
