#pragma once

#include <cstdint>
#include <vector>

#include "tirtarget/boosting.hpp"
#include "tirtarget/matrix.hpp"

namespace tir::forest {

struct ForestConfig {
  int n_trees = 200;
  int min_leaf = 20;  // applies to both the structure and estimation halves
  int max_depth = 8;
  int max_bins = 64;
};

enum class LeafKind { regression, causal };

struct ForestNode {
  int feature = -1;
  double threshold = 0;
  double value = 0;
  int left = -1;
  int right = -1;

  bool is_leaf() const { return left < 0; }
};

struct ForestTree {
  std::vector<ForestNode> nodes;

  double predict(std::span<const double> x) const;
};

// Honest forest: each tree draws a half-sample, splits it into a structure
// half (chooses splits) and an estimation half (fills leaf values), so no
// row influences both the partition and its own leaf estimate.
struct HonestForest {
  LeafKind kind = LeafKind::regression;
  std::vector<ForestTree> trees;

  // Mean over trees of the leaf value containing x.
  double predict(std::span<const double> x) const;
};

// Regression leaves: mean of y over estimation rows.
HonestForest fit_regression_forest(const Matrix& X, const std::vector<double>& y,
                                   const ForestConfig& cfg, std::uint64_t seed);

// Causal leaves: sum(w~ * y~) / sum(w~^2) over estimation rows, where y~ and
// w~ are the centered outcome and treatment passed by the caller.
HonestForest fit_causal_forest(const Matrix& X, const std::vector<double>& y_tilde,
                               const std::vector<double>& w_tilde, const ForestConfig& cfg,
                               std::uint64_t seed);

}  // namespace tir::forest
