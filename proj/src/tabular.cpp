#include "vfl/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "vfl/rng.hpp"

namespace vfl {

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  out.push_back(field);
  return out;
}

}  // namespace

CsvTable parse_csv(const std::string& text) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      table.header = split_line(line);
      first = false;
    } else {
      auto row = split_line(line);
      if (row.size() != table.header.size())
        throw DomainError("csv: row width differs from header");
      table.rows.push_back(std::move(row));
    }
  }
  if (first) throw DomainError("csv: missing header row");
  return table;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("csv: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str());
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw ConfigError("csv: cannot write " + path);
  for (std::size_t i = 0; i < table.header.size(); ++i)
    out << table.header[i] << (i + 1 < table.header.size() ? "," : "\n");
  for (const auto& row : table.rows)
    for (std::size_t i = 0; i < row.size(); ++i)
      out << row[i] << (i + 1 < row.size() ? "," : "\n");
}

namespace {

double parse_double(const std::string& s, const std::string& col) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DomainError("csv: non-numeric value '" + s + "' in continuous column " + col);
  }
}

}  // namespace

Preprocessor Preprocessor::fit(const CsvTable& table, const SchemaConfig& schema,
                               const std::vector<int>& train_rows) {
  Preprocessor p;
  p.response_ = schema.response;
  p.positive_label_ = schema.positive_label;
  if (table.column(schema.response) < 0)
    throw ConfigError("schema: response column '" + schema.response + "' missing");

  // Covariates keep their file order; one-hot groups stay contiguous.
  for (const std::string& name : table.header) {
    const bool is_cont =
        std::find(schema.continuous.begin(), schema.continuous.end(), name) !=
        schema.continuous.end();
    const bool is_cat =
        std::find(schema.categorical.begin(), schema.categorical.end(), name) !=
        schema.categorical.end();
    if (is_cont && is_cat) throw ConfigError("schema: column '" + name + "' listed twice");
    if (name == schema.response) {
      if (is_cont || is_cat) throw ConfigError("schema: response cannot also be a feature");
      continue;
    }
    if (!is_cont && !is_cat) continue;

    Column col;
    col.name = name;
    col.categorical = is_cat;
    const int idx = table.column(name);
    if (is_cont) {
      double mean = 0.0, sq = 0.0;
      for (int r : train_rows) {
        const double v = parse_double(table.rows[static_cast<std::size_t>(r)]
                                               [static_cast<std::size_t>(idx)],
                                      name);
        mean += v;
        sq += v * v;
      }
      mean /= static_cast<double>(train_rows.size());
      const double var = sq / static_cast<double>(train_rows.size()) - mean * mean;
      col.mean = mean;
      col.sd = std::sqrt(std::max(0.0, var));
      if (col.sd < 1e-12) {
        col.dropped = true;
        p.warnings_.push_back("constant continuous column dropped: " + name);
      }
    } else {
      std::set<std::string> cats;
      for (int r : train_rows)
        cats.insert(table.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(idx)]);
      col.categories.assign(cats.begin(), cats.end());
    }
    p.columns_.push_back(std::move(col));
  }

  for (const std::string& name : schema.continuous)
    if (table.column(name) < 0) throw ConfigError("schema: continuous column missing: " + name);
  for (const std::string& name : schema.categorical)
    if (table.column(name) < 0) throw ConfigError("schema: categorical column missing: " + name);
  return p;
}

Preprocessor::Output Preprocessor::transform(const CsvTable& table,
                                             const std::vector<int>& rows) const {
  Output out;
  out.warnings = warnings_;
  std::size_t width = 0;
  for (const Column& col : columns_) {
    if (col.dropped) {
      out.groups.push_back({col.name, 0});
      continue;
    }
    const int w = col.categorical ? static_cast<int>(col.categories.size()) : 1;
    out.groups.push_back({col.name, w});
    if (col.categorical) {
      for (const std::string& cat : col.categories)
        out.feature_names.push_back(col.name + "=" + cat);
    } else {
      out.feature_names.push_back(col.name);
    }
    width += static_cast<std::size_t>(w);
  }

  out.features = Mat(rows.size(), width);
  out.y.resize(rows.size());
  const int yidx = table.column(response_);

  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = table.rows.at(static_cast<std::size_t>(rows[i]));
    std::size_t at = 0;
    for (const Column& col : columns_) {
      if (col.dropped) continue;
      const int idx = table.column(col.name);
      const std::string& cell = row[static_cast<std::size_t>(idx)];
      if (col.categorical) {
        bool seen = false;
        for (std::size_t c = 0; c < col.categories.size(); ++c) {
          const bool hit = col.categories[c] == cell;
          out.features(i, at + c) = hit ? 1.0 : 0.0;
          seen = seen || hit;
        }
        if (!seen)
          out.warnings.push_back("unseen category '" + cell + "' in " + col.name +
                                 " mapped to all-zeros");
        at += col.categories.size();
      } else {
        out.features(i, at) = (parse_double(cell, col.name) - col.mean) / col.sd;
        at += 1;
      }
    }
    const std::string& ycell = row[static_cast<std::size_t>(yidx)];
    if (ycell == positive_label_) {
      out.y[i] = 1.0;
    } else {
      // Numeric 0/1 responses work without an explicit label map.
      out.y[i] = (ycell == "1") ? 1.0 : 0.0;
    }
  }
  return out;
}

std::vector<int> kfold(std::size_t n, int k, std::uint64_t seed) {
  if (k < 1 || static_cast<std::size_t>(k) > n) throw DomainError("kfold: need 1 <= k <= n");
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  RngStream rng(seed, 9101);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.uniform_int(0, i - 1);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<int> assignment(n);
  for (std::size_t i = 0; i < n; ++i)
    assignment[static_cast<std::size_t>(order[i])] = static_cast<int>(i % static_cast<std::size_t>(k));
  return assignment;
}

std::vector<int> fold_rows(const std::vector<int>& assignment, int fold, bool in_fold) {
  std::vector<int> rows;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if ((assignment[i] == fold) == in_fold) rows.push_back(static_cast<int>(i));
  return rows;
}

Dataset tabular_dataset(const Preprocessor::Output& out,
                        const std::vector<int>& covariates_per_client) {
  int total = 0;
  for (int c : covariates_per_client) total += c;
  int nonzero_groups = 0;
  for (const auto& g : out.groups) nonzero_groups += 1;
  if (total != nonzero_groups)
    throw ConfigError("tabular_dataset: covariate split must cover every original column");

  std::vector<int> widths;
  std::size_t at = 0;
  for (int c : covariates_per_client) {
    int w = 0;
    for (int g = 0; g < c; ++g) w += out.groups[at + static_cast<std::size_t>(g)].width;
    at += static_cast<std::size_t>(c);
    widths.push_back(w);
  }
  Dataset d;
  d.y = out.y;
  d.blocks = vertical_partition(out.features, widths);
  return d;
}

}  // namespace vfl
