#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tirtarget/matrix.hpp"

namespace tir::boost {

// Quantile binning shared by all trees of one model. Bin b holds values
// x <= upper_bounds[b]; the last bin is open-ended.
struct BinMapper {
  std::vector<std::vector<double>> upper_bounds;  // per feature, ascending

  int n_features() const { return static_cast<int>(upper_bounds.size()); }
  int n_bins(int feature) const {
    return static_cast<int>(upper_bounds[static_cast<size_t>(feature)].size()) + 1;
  }
  std::uint8_t bin(int feature, double x) const;

  static BinMapper build(const Matrix& X, int max_bins);
};

struct TreeNode {
  int feature = -1;
  std::uint8_t split_bin = 0;  // go left when bin <= split_bin
  double threshold = 0;        // raw-value equivalent: left when x <= threshold
  double value = 0;            // leaf weight (valid when leaf)
  int left = -1;
  int right = -1;

  bool is_leaf() const { return left < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> x) const;
  double predict_binned(const std::vector<std::vector<std::uint8_t>>& bins, size_t row) const;
};

enum class Loss { squared, logistic };

struct GridPoint {
  int n_trees = 150;
  int max_depth = 3;
  double learning_rate = 0.1;
};

struct RegressorConfig {
  std::vector<GridPoint> grid = {{300, 3, 0.05}, {150, 3, 0.1}, {150, 2, 0.1}};
  int min_leaf = 20;
  double lambda = 1.0;
  int max_bins = 64;
  Loss loss = Loss::squared;
  int cv_folds = 3;
};

// Boosted trees over binned features. For the logistic loss, predict returns
// the raw log-odds score and predict_proba the sigmoid of it.
struct Regressor {
  double base_score = 0;
  double learning_rate = 0.1;
  Loss loss = Loss::squared;
  BinMapper mapper;
  std::vector<Tree> trees;
  GridPoint chosen;  // grid point used for the final fit

  double predict(std::span<const double> x) const;
  std::vector<double> predict(const Matrix& X) const;
  double predict_proba(std::span<const double> x) const;
};

// Gradient boosting with the fixed hyperparameter grid chosen by k-fold
// cross-validation (skipped for single-point grids). Training is invariant
// to row order: rows are first brought into a canonical sort order and all
// reductions run in that order.
Regressor fit_regressor(const Matrix& X, const std::vector<double>& y,
                        const RegressorConfig& cfg, std::uint64_t seed);

}  // namespace tir::boost
