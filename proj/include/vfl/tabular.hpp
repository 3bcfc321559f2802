#pragma once

#include <string>
#include <vector>

#include "vfl/dataset.hpp"
#include "vfl/vec.hpp"

namespace vfl {

struct SchemaConfig {
  std::vector<std::string> continuous;
  std::vector<std::string> categorical;
  std::string response;
  std::string positive_label = "1";
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
  std::size_t n() const { return rows.size(); }
};

// Comma-separated, header row required, UTF-8. Quoted fields are not part of
// the dialect this artifact consumes.
CsvTable read_csv(const std::string& path);
CsvTable parse_csv(const std::string& text);
void write_csv(const std::string& path, const CsvTable& table);

// Transform fitted on training rows only; test rows reuse the same statistics
// and category lists.
class Preprocessor {
 public:
  struct ColumnOut {
    std::string source;  // original covariate name
    int width = 0;       // expanded width (1 for continuous, #categories otherwise)
  };

  static Preprocessor fit(const CsvTable& table, const SchemaConfig& schema,
                          const std::vector<int>& train_rows);

  struct Output {
    Mat features;
    Vec y;
    std::vector<std::string> feature_names;
    std::vector<ColumnOut> groups;  // per original covariate, file order
    std::vector<std::string> warnings;
  };

  Output transform(const CsvTable& table, const std::vector<int>& rows) const;

  const std::vector<std::string>& fit_warnings() const { return warnings_; }

 private:
  struct Column {
    std::string name;
    bool categorical = false;
    bool dropped = false;       // constant continuous column
    double mean = 0.0, sd = 1.0;
    std::vector<std::string> categories;  // sorted training categories
  };
  std::vector<Column> columns_;  // file order, schema-selected
  std::string response_;
  std::string positive_label_;
  std::vector<std::string> warnings_;
};

// Fold id per row: near-equal sizes, exact cover, seed-deterministic.
std::vector<int> kfold(std::size_t n, int k, std::uint64_t seed);
std::vector<int> fold_rows(const std::vector<int>& assignment, int fold, bool in_fold);

// A dataset from preprocessed features: contiguous blocks over ORIGINAL
// covariates (one-hot groups never straddle clients).
Dataset tabular_dataset(const Preprocessor::Output& out,
                        const std::vector<int>& covariates_per_client);

}  // namespace vfl
