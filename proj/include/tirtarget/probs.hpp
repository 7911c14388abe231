#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "tirtarget/errors.hpp"
#include "tirtarget/rng.hpp"

namespace tir {

inline void softmax_inplace(std::span<double> z) {
  double m = *std::max_element(z.begin(), z.end());
  double total = 0;
  for (double& v : z) {
    v = std::exp(v - m);
    total += v;
  }
  for (double& v : z) v /= total;
}

// Raises every entry below `floor` to exactly `floor` and removes the added
// mass from the remaining entries in proportion to their excess above the
// floor. Keeps the vector a probability distribution with min >= floor.
inline void clip_and_renormalize(std::span<double> p, double floor) {
  if (floor < 0 || floor * static_cast<double>(p.size()) > 1.0 + 1e-12) {
    throw ConfigError("probability floor infeasible for this many classes");
  }
  double deficit = 0;
  double excess = 0;
  for (double v : p) {
    if (v < floor) {
      deficit += floor - v;
    } else {
      excess += v - floor;
    }
  }
  if (deficit == 0) return;
  for (double& v : p) {
    if (v < floor) {
      v = floor;
    } else {
      v -= deficit * (v - floor) / excess;
    }
  }
}

inline int sample_categorical(Rng& rng, std::span<const double> p) {
  double u = rng.uniform();
  double cum = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    cum += p[i];
    if (u < cum) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;
}

}  // namespace tir
