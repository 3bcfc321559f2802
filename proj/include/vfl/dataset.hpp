#pragma once

#include <vector>

#include "vfl/vec.hpp"

namespace vfl {

// Response plus vertically partitioned covariate blocks. Every block holds
// the same observations (rows); clients differ only in which columns they own.
struct Dataset {
  Vec y;
  std::vector<Mat> blocks;
  Vec offset;              // per-row additive offset (e.g. log population); empty if unused
  std::vector<int> group;  // 0-based level index per row; empty if unused
  int levels = 0;

  std::size_t n() const { return y.size(); }
  int num_clients() const { return static_cast<int>(blocks.size()); }
  std::size_t total_covariates() const;
  void validate() const;
};

// Contiguous column slices, in order; sizes must sum to features.cols.
std::vector<Mat> vertical_partition(const Mat& features, const std::vector<int>& sizes);

}  // namespace vfl
