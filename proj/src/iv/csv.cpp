#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "calpha/error.hpp"
#include "calpha/iv/iv_model.hpp"

namespace calpha::iv {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  std::string out = s.substr(b, e - b + 1);
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string::size_type start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" || cell == ".";
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Eigen::MatrixXd read_csv_columns(const std::string& path, const std::vector<std::string>& names) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  if (names.empty()) throw SchemaError("no columns requested from '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw SchemaError("'" + path + "' is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_row(line);
  std::map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < header.size(); ++c) index.emplace(header[c], c);

  std::vector<std::size_t> cols;
  for (const auto& name : names) {
    const auto it = index.find(name);
    if (it == index.end()) throw SchemaError("column '" + name + "' not found in '" + path + "'");
    cols.push_back(it->second);
  }

  std::vector<std::vector<std::string>> rows;
  std::vector<long> file_rows;
  long row_number = 1;
  while (std::getline(in, line)) {
    ++row_number;
    if (trim(line).empty()) continue;
    auto cells = split_row(line);
    if (cells.size() != header.size()) {
      throw ParseError("row " + std::to_string(row_number) + " has " + std::to_string(cells.size()) +
                           " fields, header has " + std::to_string(header.size()),
                       row_number, static_cast<long>(cells.size()));
    }
    rows.push_back(std::move(cells));
    file_rows.push_back(row_number);
  }
  if (rows.empty()) throw SchemaError("'" + path + "' has no data rows");

  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const long file_row = file_rows[r];
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const std::size_t c = cols[k];
      const std::string& cell = rows[r][c];
      if (is_missing(cell)) {
        throw MissingDataError("missing value in column '" + header[c] + "' at row " + std::to_string(file_row));
      }
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw ParseError("non-numeric value '" + cell + "' in column '" + header[c] + "' at row " +
                             std::to_string(file_row),
                         file_row, static_cast<long>(c) + 1);
      }
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = v;
    }
  }
  return out;
}

IVData load_csv(const std::string& path, const ColumnMap& columns, bool add_intercept) {
  if (columns.y.empty() || columns.x.empty() || columns.z2.empty()) {
    throw SchemaError("column map needs y, at least one x and at least one z2 column");
  }
  if (columns.z1.empty() && !add_intercept) {
    throw SchemaError("no z1 columns mapped and no intercept requested");
  }
  std::vector<std::string> names{columns.y};
  for (const auto* group : {&columns.x, &columns.z1, &columns.z2}) names.insert(names.end(), group->begin(), group->end());
  const Eigen::MatrixXd m = read_csv_columns(path, names);

  const Eigen::Index n = m.rows();
  const auto dx = static_cast<Eigen::Index>(columns.x.size());
  const auto dz1 = static_cast<Eigen::Index>(columns.z1.size());
  const auto dz2 = static_cast<Eigen::Index>(columns.z2.size());
  const Eigen::Index intercept = add_intercept ? 1 : 0;
  IVData data{m.col(0), m.middleCols(1, dx), Eigen::MatrixXd(n, intercept + dz1), m.middleCols(1 + dx + dz1, dz2)};
  if (add_intercept) data.z1.col(0).setOnes();
  data.z1.rightCols(dz1) = m.middleCols(1 + dx, dz1);
  return data;
}

ColumnMap default_columns(Eigen::Index dx, Eigen::Index dz1, Eigen::Index dz2) {
  ColumnMap map;
  map.y = "y";
  for (Eigen::Index k = 1; k <= dx; ++k) map.x.push_back("x" + std::to_string(k));
  for (Eigen::Index k = 1; k <= dz1; ++k) map.z1.push_back("z1_" + std::to_string(k));
  for (Eigen::Index k = 1; k <= dz2; ++k) map.z2.push_back("z2_" + std::to_string(k));
  return map;
}

void write_csv(const std::string& path, const IVData& data) {
  data.validate();
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  const auto map = default_columns(data.x.cols(), data.z1.cols(), data.z2.cols());
  out << map.y;
  for (const auto* group : {&map.x, &map.z1, &map.z2}) {
    for (const auto& name : *group) out << ',' << name;
  }
  out << '\n';
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    out << format_double(data.y(i));
    for (const auto* m : {&data.x, &data.z1, &data.z2}) {
      for (Eigen::Index c = 0; c < m->cols(); ++c) out << ',' << format_double((*m)(i, c));
    }
    out << '\n';
  }
}

}  // namespace calpha::iv
