#include "tirtarget/boosting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tirtarget/errors.hpp"
#include "tirtarget/rng.hpp"

namespace tir::boost {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct SplitCand {
  double gain = 0;
  int feature = -1;
  int bin = -1;
  bool valid() const { return feature >= 0; }
};

struct NodeRange {
  int node = 0;
  size_t begin = 0;
  size_t end = 0;
  int depth = 0;
  double g_sum = 0;
  double h_sum = 0;
};

// One boosting fit over pre-binned columns, restricted to `rows` (already in
// canonical order so every accumulation below is order-stable).
class Booster {
 public:
  Booster(const std::vector<std::vector<std::uint8_t>>& bins, const BinMapper& mapper,
          const std::vector<double>& y, const RegressorConfig& cfg)
      : bins_(bins), mapper_(mapper), y_(y), cfg_(cfg) {}

  std::pair<double, std::vector<Tree>> fit(const GridPoint& gp, const std::vector<size_t>& rows) {
    const size_t n = rows.size();
    double base = 0;
    double s = 0;
    for (size_t r : rows) s += y_[r];
    if (cfg_.loss == Loss::squared) {
      base = s / static_cast<double>(n);
    } else {
      const double p = std::clamp(s / static_cast<double>(n), 1e-7, 1.0 - 1e-7);
      base = std::log(p / (1.0 - p));
    }

    std::vector<double> score(n, base);
    std::vector<double> g(n), h(n);
    std::vector<Tree> trees;
    trees.reserve(static_cast<size_t>(gp.n_trees));

    std::vector<size_t> order(n);  // positions into `rows`, re-partitioned per tree
    for (int t = 0; t < gp.n_trees; ++t) {
      for (size_t i = 0; i < n; ++i) {
        if (cfg_.loss == Loss::squared) {
          g[i] = y_[rows[i]] - score[i];
          h[i] = 1.0;
        } else {
          const double p = sigmoid(score[i]);
          g[i] = y_[rows[i]] - p;
          h[i] = std::max(p * (1.0 - p), 1e-12);
        }
      }
      std::iota(order.begin(), order.end(), size_t{0});
      Tree tree = build_tree(gp, rows, order, g, h);
      for (size_t i = 0; i < n; ++i) {
        score[i] += gp.learning_rate * tree.predict_binned(bins_, rows[i]);
      }
      trees.push_back(std::move(tree));
    }
    return {base, std::move(trees)};
  }

 private:
  Tree build_tree(const GridPoint& gp, const std::vector<size_t>& rows,
                  std::vector<size_t>& order, const std::vector<double>& g,
                  const std::vector<double>& h) {
    Tree tree;
    tree.nodes.emplace_back();
    double g0 = 0, h0 = 0;
    for (size_t i : order) {
      g0 += g[i];
      h0 += h[i];
    }
    std::vector<NodeRange> stack;
    stack.push_back({0, 0, order.size(), 0, g0, h0});

    while (!stack.empty()) {
      const NodeRange nr = stack.back();
      stack.pop_back();
      const size_t count = nr.end - nr.begin;

      SplitCand best;
      if (nr.depth < gp.max_depth && count >= 2 * static_cast<size_t>(cfg_.min_leaf)) {
        best = find_split(rows, order, nr, g, h);
      }
      if (!best.valid()) {
        tree.nodes[static_cast<size_t>(nr.node)].value = nr.g_sum / (nr.h_sum + cfg_.lambda);
        continue;
      }

      const auto mid = std::stable_partition(
          order.begin() + static_cast<long>(nr.begin), order.begin() + static_cast<long>(nr.end),
          [&](size_t i) {
            return bins_[static_cast<size_t>(best.feature)][rows[i]] <=
                   static_cast<std::uint8_t>(best.bin);
          });
      const size_t split_pos = static_cast<size_t>(mid - order.begin());

      double gl = 0, hl = 0;
      for (size_t p = nr.begin; p < split_pos; ++p) {
        gl += g[order[p]];
        hl += h[order[p]];
      }

      const int left = static_cast<int>(tree.nodes.size());
      const int right = left + 1;
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      TreeNode& node = tree.nodes[static_cast<size_t>(nr.node)];
      node.feature = best.feature;
      node.split_bin = static_cast<std::uint8_t>(best.bin);
      node.threshold =
          model_threshold(best.feature, best.bin);
      node.left = left;
      node.right = right;
      stack.push_back({right, split_pos, nr.end, nr.depth + 1, nr.g_sum - gl, nr.h_sum - hl});
      stack.push_back({left, nr.begin, split_pos, nr.depth + 1, gl, hl});
    }
    return tree;
  }

  double model_threshold(int feature, int bin) const {
    return mapper_.upper_bounds[static_cast<size_t>(feature)][static_cast<size_t>(bin)];
  }

  SplitCand find_split(const std::vector<size_t>& rows, const std::vector<size_t>& order,
                       const NodeRange& nr, const std::vector<double>& g,
                       const std::vector<double>& h) {
    const int d = mapper_.n_features();
    const double parent = nr.g_sum * nr.g_sum / (nr.h_sum + cfg_.lambda);
    const auto total = static_cast<double>(nr.end - nr.begin);
    SplitCand best;

    std::vector<double> hist;  // per bin: g, h, count
    for (int f = 0; f < d; ++f) {
      const int nb = mapper_.n_bins(f);
      if (nb < 2) continue;
      hist.assign(static_cast<size_t>(nb) * 3, 0.0);
      const auto& col = bins_[static_cast<size_t>(f)];
      for (size_t p = nr.begin; p < nr.end; ++p) {
        const size_t i = order[p];
        const size_t b = col[rows[i]];
        hist[b * 3] += g[i];
        hist[b * 3 + 1] += h[i];
        hist[b * 3 + 2] += 1.0;
      }
      double gl = 0, hl = 0, cl = 0;
      for (int b = 0; b < nb - 1; ++b) {
        gl += hist[static_cast<size_t>(b) * 3];
        hl += hist[static_cast<size_t>(b) * 3 + 1];
        cl += hist[static_cast<size_t>(b) * 3 + 2];
        if (cl < cfg_.min_leaf) continue;
        if (total - cl < cfg_.min_leaf) break;
        const double gr = nr.g_sum - gl;
        const double hr = nr.h_sum - hl;
        const double gain = gl * gl / (hl + cfg_.lambda) + gr * gr / (hr + cfg_.lambda) - parent;
        if (gain > best.gain + 1e-12) {
          best.gain = gain;
          best.feature = f;
          best.bin = b;
        }
      }
    }
    return best;
  }

  const std::vector<std::vector<std::uint8_t>>& bins_;
  const BinMapper& mapper_;
  const std::vector<double>& y_;
  const RegressorConfig& cfg_;
};

}  // namespace

std::uint8_t BinMapper::bin(int feature, double x) const {
  const auto& ub = upper_bounds[static_cast<size_t>(feature)];
  const auto it = std::lower_bound(ub.begin(), ub.end(), x);
  return static_cast<std::uint8_t>(it - ub.begin());
}

BinMapper BinMapper::build(const Matrix& X, int max_bins) {
  BinMapper m;
  m.upper_bounds.resize(static_cast<size_t>(X.cols));
  std::vector<double> vals(static_cast<size_t>(X.rows));
  for (int f = 0; f < X.cols; ++f) {
    for (int r = 0; r < X.rows; ++r) vals[static_cast<size_t>(r)] = X.at(r, f);
    std::sort(vals.begin(), vals.end());
    const auto last = std::unique(vals.begin(), vals.end());
    const size_t nd = static_cast<size_t>(last - vals.begin());
    auto& ub = m.upper_bounds[static_cast<size_t>(f)];
    if (nd <= 1) continue;  // constant feature: one bin, never split
    if (nd <= static_cast<size_t>(max_bins)) {
      for (size_t i = 0; i + 1 < nd; ++i) ub.push_back(0.5 * (vals[i] + vals[i + 1]));
    } else {
      for (int b = 1; b < max_bins; ++b) {
        const size_t idx = nd * static_cast<size_t>(b) / static_cast<size_t>(max_bins);
        const double cut = 0.5 * (vals[idx - 1] + vals[idx]);
        if (ub.empty() || cut > ub.back()) ub.push_back(cut);
      }
    }
  }
  return m;
}

double Tree::predict(std::span<const double> x) const {
  int node = 0;
  while (!nodes[static_cast<size_t>(node)].is_leaf()) {
    const TreeNode& n = nodes[static_cast<size_t>(node)];
    node = x[static_cast<size_t>(n.feature)] <= n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<size_t>(node)].value;
}

double Tree::predict_binned(const std::vector<std::vector<std::uint8_t>>& bins, size_t row) const {
  int node = 0;
  while (!nodes[static_cast<size_t>(node)].is_leaf()) {
    const TreeNode& n = nodes[static_cast<size_t>(node)];
    node = bins[static_cast<size_t>(n.feature)][row] <= n.split_bin ? n.left : n.right;
  }
  return nodes[static_cast<size_t>(node)].value;
}

double Regressor::predict(std::span<const double> x) const {
  double s = base_score;
  for (const auto& t : trees) s += learning_rate * t.predict(x);
  return s;
}

std::vector<double> Regressor::predict(const Matrix& X) const {
  std::vector<double> out(static_cast<size_t>(X.rows));
  for (int r = 0; r < X.rows; ++r) out[static_cast<size_t>(r)] = predict(X.row(r));
  return out;
}

double Regressor::predict_proba(std::span<const double> x) const { return sigmoid(predict(x)); }

Regressor fit_regressor(const Matrix& X, const std::vector<double>& y,
                        const RegressorConfig& cfg, std::uint64_t seed) {
  if (static_cast<size_t>(X.rows) != y.size())
    throw InconsistentInputError("X and y row counts differ");
  if (X.rows < 10) throw InconsistentInputError("need at least 10 training rows");
  if (cfg.grid.empty()) throw ConfigError("hyperparameter grid is empty");
  for (double v : X.data)
    if (!std::isfinite(v)) throw InconsistentInputError("non-finite feature value");
  for (double v : y)
    if (!std::isfinite(v)) throw InconsistentInputError("non-finite target value");

  Regressor model;
  model.loss = cfg.loss;

  const bool constant_y = std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
  if (constant_y && cfg.loss == Loss::squared) {
    model.base_score = y[0];
    model.learning_rate = 0;
    model.mapper.upper_bounds.resize(static_cast<size_t>(X.cols));
    return model;
  }

  model.mapper = BinMapper::build(X, cfg.max_bins);

  const size_t n = static_cast<size_t>(X.rows);
  std::vector<std::vector<std::uint8_t>> bins(static_cast<size_t>(X.cols),
                                              std::vector<std::uint8_t>(n));
  for (int f = 0; f < X.cols; ++f)
    for (int r = 0; r < X.rows; ++r)
      bins[static_cast<size_t>(f)][static_cast<size_t>(r)] = model.mapper.bin(f, X.at(r, f));

  // Canonical row order: lexicographic in (binned features, y). Makes the
  // fit independent of the caller's row order.
  std::vector<size_t> canonical(n);
  std::iota(canonical.begin(), canonical.end(), size_t{0});
  std::sort(canonical.begin(), canonical.end(), [&](size_t a, size_t b) {
    for (size_t f = 0; f < static_cast<size_t>(X.cols); ++f) {
      if (bins[f][a] != bins[f][b]) return bins[f][a] < bins[f][b];
    }
    return y[a] < y[b];
  });

  Booster booster(bins, model.mapper, y, cfg);

  GridPoint chosen = cfg.grid[0];
  if (cfg.grid.size() > 1) {
    std::vector<int> fold(n);
    for (size_t pos = 0; pos < n; ++pos) {
      fold[pos] =
          static_cast<int>(hash_stream(seed, pos) % static_cast<std::uint64_t>(cfg.cv_folds));
    }
    double best_mse = std::numeric_limits<double>::infinity();
    for (const auto& gp : cfg.grid) {
      double se = 0;
      size_t held = 0;
      for (int k = 0; k < cfg.cv_folds; ++k) {
        std::vector<size_t> train_rows;
        std::vector<size_t> test_rows;
        for (size_t pos = 0; pos < n; ++pos) {
          (fold[pos] == k ? test_rows : train_rows).push_back(canonical[pos]);
        }
        if (train_rows.size() < 2 || test_rows.empty()) continue;
        auto [base, trees] = booster.fit(gp, train_rows);
        for (size_t r : test_rows) {
          double s = base;
          for (const auto& t : trees) s += gp.learning_rate * t.predict_binned(bins, r);
          if (cfg.loss == Loss::logistic) s = sigmoid(s);
          const double d = s - y[r];
          se += d * d;
          ++held;
        }
      }
      const double mse = se / static_cast<double>(held);
      if (mse < best_mse - 1e-15) {
        best_mse = mse;
        chosen = gp;
      }
    }
  }

  auto [base, trees] = booster.fit(chosen, canonical);
  model.base_score = base;
  model.trees = std::move(trees);
  model.learning_rate = chosen.learning_rate;
  model.chosen = chosen;
  return model;
}

}  // namespace tir::boost
