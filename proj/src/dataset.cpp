#include "vfl/dataset.hpp"

#include <string>

namespace vfl {

std::size_t Dataset::total_covariates() const {
  std::size_t p = 0;
  for (const Mat& b : blocks) p += b.cols;
  return p;
}

void Dataset::validate() const {
  const std::size_t rows = n();
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    if (blocks[j].rows != rows) {
      throw ShapeError("dataset: block " + std::to_string(j) + " has " +
                       std::to_string(blocks[j].rows) + " rows, expected " + std::to_string(rows));
    }
  }
  if (!offset.empty() && offset.size() != rows) throw ShapeError("dataset: offset length mismatch");
  if (!group.empty()) {
    if (group.size() != rows) throw ShapeError("dataset: group length mismatch");
    for (int g : group) {
      if (g < 0 || g >= levels) throw DomainError("dataset: group value outside declared levels");
    }
  }
}

std::vector<Mat> vertical_partition(const Mat& features, const std::vector<int>& sizes) {
  std::size_t total = 0;
  for (int s : sizes) {
    if (s <= 0) throw ShapeError("vertical_partition: block sizes must be positive");
    total += static_cast<std::size_t>(s);
  }
  if (total != features.cols) {
    throw ShapeError("vertical_partition: sizes sum to " + std::to_string(total) + ", matrix has " +
                     std::to_string(features.cols) + " columns");
  }
  std::vector<Mat> blocks;
  std::size_t at = 0;
  for (int s : sizes) {
    Mat b(features.rows, static_cast<std::size_t>(s));
    for (std::size_t i = 0; i < features.rows; ++i)
      for (int j = 0; j < s; ++j) b(i, j) = features(i, at + j);
    blocks.push_back(std::move(b));
    at += static_cast<std::size_t>(s);
  }
  return blocks;
}

}  // namespace vfl
