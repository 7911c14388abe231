#include "tirtarget/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tirtarget/errors.hpp"
#include "tirtarget/parallel.hpp"
#include "tirtarget/rng.hpp"

namespace tir::forest {

namespace {

// Both leaf kinds reduce to per-row (a, b) with leaf value sum(a)/sum(b) and
// split score (sum a)^2 / sum b:
//   regression: a = y,        b = 1
//   causal:     a = w~ * y~,  b = w~^2
struct NodeRange {
  int node = 0;
  size_t begin = 0, end = 0;          // structure rows
  size_t est_begin = 0, est_end = 0;  // estimation rows
  int depth = 0;
};

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<std::vector<std::uint8_t>>& bins, const boost::BinMapper& mapper,
              const std::vector<double>& a, const std::vector<double>& b,
              const ForestConfig& cfg)
      : bins_(bins), mapper_(mapper), a_(a), b_(b), cfg_(cfg) {}

  ForestTree build(std::vector<size_t> structure, std::vector<size_t> estimate, Rng& rng) {
    ForestTree tree;
    tree.nodes.emplace_back();
    std::vector<NodeRange> stack;
    stack.push_back({0, 0, structure.size(), 0, estimate.size(), 0});

    const int d = mapper_.n_features();
    const int mtry = std::max(1, static_cast<int>(std::lround(std::sqrt(double(d)))));

    while (!stack.empty()) {
      const NodeRange nr = stack.back();
      stack.pop_back();

      const size_t n_str = nr.end - nr.begin;
      double best_gain = 0;
      int best_feature = -1, best_bin = -1;

      if (nr.depth < cfg_.max_depth && n_str >= 2 * static_cast<size_t>(cfg_.min_leaf) &&
          nr.est_end - nr.est_begin >= 2 * static_cast<size_t>(cfg_.min_leaf)) {
        double a_tot = 0, b_tot = 0;
        for (size_t p = nr.begin; p < nr.end; ++p) {
          a_tot += a_[structure[p]];
          b_tot += b_[structure[p]];
        }
        const double parent = b_tot > 0 ? a_tot * a_tot / b_tot : 0.0;

        const auto feats = rng.sample_without_replacement(d, mtry);
        std::vector<double> hist;
        std::vector<double> est_count;
        for (int f : feats) {
          const int nb = mapper_.n_bins(f);
          if (nb < 2) continue;
          hist.assign(static_cast<size_t>(nb) * 3, 0.0);
          est_count.assign(static_cast<size_t>(nb), 0.0);
          const auto& col = bins_[static_cast<size_t>(f)];
          for (size_t p = nr.begin; p < nr.end; ++p) {
            const size_t r = structure[p];
            const size_t bin = col[r];
            hist[bin * 3] += a_[r];
            hist[bin * 3 + 1] += b_[r];
            hist[bin * 3 + 2] += 1.0;
          }
          for (size_t p = nr.est_begin; p < nr.est_end; ++p) est_count[col[estimate[p]]] += 1.0;

          double al = 0, bl = 0, cl = 0, el = 0;
          double e_tot = 0;
          for (int bku = 0; bku < nb; ++bku) e_tot += est_count[static_cast<size_t>(bku)];
          for (int bin = 0; bin < nb - 1; ++bin) {
            al += hist[static_cast<size_t>(bin) * 3];
            bl += hist[static_cast<size_t>(bin) * 3 + 1];
            cl += hist[static_cast<size_t>(bin) * 3 + 2];
            el += est_count[static_cast<size_t>(bin)];
            if (cl < cfg_.min_leaf) continue;
            if (double(n_str) - cl < cfg_.min_leaf) break;
            // min_leaf binds both halves: leaf values come from estimation
            // rows, so thin estimation leaves would dominate the variance.
            if (el < cfg_.min_leaf || e_tot - el < cfg_.min_leaf) continue;
            const double ar = a_tot - al, br = b_tot - bl;
            if (bl <= 0 || br <= 0) continue;
            const double gain = al * al / bl + ar * ar / br - parent;
            if (gain > best_gain + 1e-12) {
              best_gain = gain;
              best_feature = f;
              best_bin = bin;
            }
          }
        }
      }

      if (best_feature < 0) {
        double a_est = 0, b_est = 0;
        for (size_t p = nr.est_begin; p < nr.est_end; ++p) {
          a_est += a_[estimate[p]];
          b_est += b_[estimate[p]];
        }
        tree.nodes[static_cast<size_t>(nr.node)].value = b_est > 0 ? a_est / b_est : 0.0;
        continue;
      }

      const auto& col = bins_[static_cast<size_t>(best_feature)];
      const auto go_left = [&](size_t r) {
        return col[r] <= static_cast<std::uint8_t>(best_bin);
      };
      const auto str_mid =
          std::stable_partition(structure.begin() + static_cast<long>(nr.begin),
                                structure.begin() + static_cast<long>(nr.end), go_left);
      const auto est_mid =
          std::stable_partition(estimate.begin() + static_cast<long>(nr.est_begin),
                                estimate.begin() + static_cast<long>(nr.est_end), go_left);
      const size_t str_split = static_cast<size_t>(str_mid - structure.begin());
      const size_t est_split = static_cast<size_t>(est_mid - estimate.begin());

      const int left = static_cast<int>(tree.nodes.size());
      const int right = left + 1;
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      ForestNode& node = tree.nodes[static_cast<size_t>(nr.node)];
      node.feature = best_feature;
      node.threshold = mapper_.upper_bounds[static_cast<size_t>(best_feature)]
                                           [static_cast<size_t>(best_bin)];
      node.left = left;
      node.right = right;
      stack.push_back({right, str_split, nr.end, est_split, nr.est_end, nr.depth + 1});
      stack.push_back({left, nr.begin, str_split, nr.est_begin, est_split, nr.depth + 1});
    }
    return tree;
  }

 private:
  const std::vector<std::vector<std::uint8_t>>& bins_;
  const boost::BinMapper& mapper_;
  const std::vector<double>& a_;
  const std::vector<double>& b_;
  const ForestConfig& cfg_;
};

HonestForest fit_forest(const Matrix& X, const std::vector<double>& a,
                        const std::vector<double>& b, LeafKind kind, const ForestConfig& cfg,
                        std::uint64_t seed) {
  const size_t n = static_cast<size_t>(X.rows);
  if (n != a.size() || n != b.size()) throw InconsistentInputError("row count mismatch");
  if (X.rows < 4 * cfg.min_leaf)
    throw InconsistentInputError("too few rows for an honest half-sample forest");
  for (double v : X.data)
    if (!std::isfinite(v)) throw InconsistentInputError("non-finite feature value");

  const boost::BinMapper mapper = boost::BinMapper::build(X, cfg.max_bins);
  std::vector<std::vector<std::uint8_t>> bins(static_cast<size_t>(X.cols),
                                              std::vector<std::uint8_t>(n));
  for (int f = 0; f < X.cols; ++f)
    for (int r = 0; r < X.rows; ++r)
      bins[static_cast<size_t>(f)][static_cast<size_t>(r)] = mapper.bin(f, X.at(r, f));

  HonestForest forest;
  forest.kind = kind;
  forest.trees.resize(static_cast<size_t>(cfg.n_trees));
  TreeBuilder builder(bins, mapper, a, b, cfg);
  parallel_for(cfg.n_trees, [&](int t) {
    Rng rng(hash_stream(seed, static_cast<std::uint64_t>(t)));
    const auto half = rng.sample_without_replacement(X.rows, X.rows / 2);
    std::vector<size_t> structure, estimate;
    structure.reserve(half.size() / 2 + 1);
    estimate.reserve(half.size() / 2 + 1);
    // Alternate sorted half-sample positions between the two roles; the
    // assignment never looks at outcomes, which is what honesty needs.
    for (size_t i = 0; i < half.size(); ++i) {
      (i % 2 == 0 ? structure : estimate).push_back(static_cast<size_t>(half[i]));
    }
    forest.trees[static_cast<size_t>(t)] =
        builder.build(std::move(structure), std::move(estimate), rng);
  });
  return forest;
}

}  // namespace

double ForestTree::predict(std::span<const double> x) const {
  int node = 0;
  while (!nodes[static_cast<size_t>(node)].is_leaf()) {
    const ForestNode& n = nodes[static_cast<size_t>(node)];
    node = x[static_cast<size_t>(n.feature)] <= n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<size_t>(node)].value;
}

double HonestForest::predict(std::span<const double> x) const {
  double s = 0;
  for (const auto& t : trees) s += t.predict(x);
  return trees.empty() ? 0.0 : s / static_cast<double>(trees.size());
}

HonestForest fit_regression_forest(const Matrix& X, const std::vector<double>& y,
                                   const ForestConfig& cfg, std::uint64_t seed) {
  std::vector<double> ones(y.size(), 1.0);
  return fit_forest(X, y, ones, LeafKind::regression, cfg, seed);
}

HonestForest fit_causal_forest(const Matrix& X, const std::vector<double>& y_tilde,
                               const std::vector<double>& w_tilde, const ForestConfig& cfg,
                               std::uint64_t seed) {
  std::vector<double> a(y_tilde.size()), b(y_tilde.size());
  for (size_t i = 0; i < y_tilde.size(); ++i) {
    a[i] = w_tilde[i] * y_tilde[i];
    b[i] = w_tilde[i] * w_tilde[i];
  }
  return fit_forest(X, a, b, LeafKind::causal, cfg, seed);
}

}  // namespace tir::forest
