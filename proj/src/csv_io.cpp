#include "excursionlab/csv_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "excursionlab/errors.hpp"

namespace excursionlab {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

double parse_double(const std::string& cell, long row, const std::string& col) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end)
    throw IoError("row " + std::to_string(row) + ": cannot parse '" + cell + "' in column " + col);
  return value;
}

long parse_long(const std::string& cell, long row, const std::string& col) {
  long value = 0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size())
    throw IoError("row " + std::to_string(row) + ": cannot parse '" + cell + "' in column " + col);
  return value;
}

void format_double(std::ostream& out, double v) {
  char buf[32];
  const int len = snprintf(buf, sizeof(buf), "%.17g", v);
  out.write(buf, len);
}

}  // namespace

Panel load_panel_csv(std::istream& in, const PanelCsvSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty csv");
  const auto header = split_csv_line(line);
  std::map<std::string, int> col;
  for (std::size_t j = 0; j < header.size(); ++j) col[header[j]] = static_cast<int>(j);

  auto require = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw IoError("missing required column '" + name + "'");
    return it->second;
  };
  const int c_id = require(schema.id);
  const int c_t = require(schema.t);
  const int c_avail = require(schema.avail);
  const int c_prob = require(schema.prob);
  const int c_treat = require(schema.treat);
  const int c_outcome = require(schema.outcome);

  // header order, so a write/load round trip preserves column order
  std::vector<std::pair<std::string, int>> h_cols, f_cols;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j].rfind(schema.history_prefix, 0) == 0)
      h_cols.emplace_back(header[j], static_cast<int>(j));
    if (header[j].rfind(schema.moderator_prefix, 0) == 0)
      f_cols.emplace_back(header[j], static_cast<int>(j));
  }
  if (f_cols.empty()) throw IoError("no moderator columns (prefix '" + schema.moderator_prefix +
                                    "') found");

  struct Row {
    long t;
    DecisionPoint pt;
  };
  std::map<long, std::vector<Row>> by_id;  // keeps first-seen ordering via sorted id
  std::vector<long> id_order;
  long row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() < header.size())
      throw IoError("row " + std::to_string(row_no) + ": expected " +
                    std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
    Row row;
    const long id = parse_long(cells[c_id], row_no, schema.id);
    row.t = parse_long(cells[c_t], row_no, schema.t);
    row.pt.avail = static_cast<int>(parse_long(cells[c_avail], row_no, schema.avail));
    row.pt.prob = parse_double(cells[c_prob], row_no, schema.prob);
    row.pt.treat = static_cast<int>(parse_long(cells[c_treat], row_no, schema.treat));
    row.pt.outcome = parse_double(cells[c_outcome], row_no, schema.outcome);
    row.pt.history.resize(static_cast<int>(h_cols.size()));
    for (std::size_t j = 0; j < h_cols.size(); ++j)
      row.pt.history[static_cast<int>(j)] = parse_double(cells[h_cols[j].second], row_no, h_cols[j].first);
    row.pt.moderator.resize(static_cast<int>(f_cols.size()));
    for (std::size_t j = 0; j < f_cols.size(); ++j)
      row.pt.moderator[static_cast<int>(j)] = parse_double(cells[f_cols[j].second], row_no, f_cols[j].first);
    if (by_id.find(id) == by_id.end()) id_order.push_back(id);
    by_id[id].push_back(std::move(row));
  }
  if (by_id.empty()) throw IoError("csv has a header but no data rows");

  std::vector<Trajectory> trajs;
  trajs.reserve(by_id.size());
  for (long id : id_order) {
    auto& rows = by_id[id];
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
    for (std::size_t k = 0; k < rows.size(); ++k)
      if (rows[k].t != static_cast<long>(k) + 1)
        throw IoError("id " + std::to_string(id) + ": t must be contiguous 1..T, found t=" +
                      std::to_string(rows[k].t) + " at position " + std::to_string(k + 1));
    Trajectory traj;
    for (auto& r : rows) traj.points.push_back(std::move(r.pt));
    trajs.push_back(std::move(traj));
  }
  PanelMeta meta;
  for (const auto& [name, j] : h_cols) meta.history_names.push_back(name.substr(schema.history_prefix.size()));
  for (const auto& [name, j] : f_cols) meta.moderator_names.push_back(name.substr(schema.moderator_prefix.size()));
  try {
    return Panel(std::move(trajs), std::move(meta));
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("csv structure: ") + e.what());
  }
}

Panel load_panel_csv(const std::string& path, const PanelCsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return load_panel_csv(in, schema);
}

void write_panel_csv(const Panel& panel, std::ostream& out, const PanelCsvSchema& schema) {
  out << schema.id << ',' << schema.t << ',' << schema.avail << ',' << schema.prob << ','
      << schema.treat << ',' << schema.outcome;
  for (int j = 0; j < panel.history_dim(); ++j) {
    const std::string name = j < static_cast<int>(panel.meta().history_names.size())
                                 ? panel.meta().history_names[j]
                                 : std::to_string(j + 1);
    out << ',' << schema.history_prefix << name;
  }
  for (int j = 0; j < panel.moderator_dim(); ++j) {
    const std::string name = j < static_cast<int>(panel.meta().moderator_names.size())
                                 ? panel.meta().moderator_names[j]
                                 : std::to_string(j + 1);
    out << ',' << schema.moderator_prefix << name;
  }
  out << '\n';
  for (int i = 0; i < panel.n(); ++i)
    for (int t = 0; t < panel.horizon(); ++t) {
      const auto& pt = panel.at(i, t);
      out << (i + 1) << ',' << (t + 1) << ',' << pt.avail << ',';
      format_double(out, pt.prob);
      out << ',' << pt.treat << ',';
      format_double(out, pt.outcome);
      for (int j = 0; j < pt.history.size(); ++j) {
        out << ',';
        format_double(out, pt.history[j]);
      }
      for (int j = 0; j < pt.moderator.size(); ++j) {
        out << ',';
        format_double(out, pt.moderator[j]);
      }
      out << '\n';
    }
}

void write_panel_csv(const Panel& panel, const std::string& path, const PanelCsvSchema& schema) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_panel_csv(panel, out, schema);
}

}  // namespace excursionlab
