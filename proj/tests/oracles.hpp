#pragma once

// Brute-force reference implementations written without reusing any library
// code path: quadratic ranking instead of sorting, explicit seat auctions
// instead of the floor-and-remainder routine.

#include "nspbert/scoring.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace nspbert::testing {

/// Position of sample i in the ranking of `idx` (q by order, then id).
inline size_t brute_rank(const std::vector<ScoredSample>& s, const std::vector<size_t>& idx, size_t i, SortOrder order) {
  size_t rank = 0;
  for (size_t j : idx) {
    if (j == i) continue;
    const double qj = s[j].q[0], qi = s[i].q[0];
    const bool before = qj != qi ? (order == SortOrder::ascending ? qj < qi : qj > qi) : s[j].id < s[i].id;
    rank += before ? 1 : 0;
  }
  return rank;
}

/// Largest-remainder seats found one seat at a time: every label first gets
/// its whole quota, then each remaining seat goes to the largest unserved
/// fractional part, the lower label index winning ties.
inline std::vector<int> brute_seats(int n, const std::vector<double>& p) {
  std::vector<int> seats(p.size());
  std::vector<double> frac(p.size());
  int left = n;
  for (size_t l = 0; l < p.size(); ++l) {
    const double quota = n * p[l];
    int whole = 0;
    while (whole + 1 <= quota) ++whole;
    seats[l] = whole;
    frac[l] = quota - whole;
    left -= whole;
  }
  std::vector<bool> served(p.size(), false);
  while (left > 0) {
    size_t best = p.size();
    for (size_t l = 0; l < p.size(); ++l) {
      if (served[l]) continue;
      if (best == p.size() || frac[l] > frac[best]) best = l;
    }
    if (best == p.size()) {
      std::fill(served.begin(), served.end(), false);
      continue;
    }
    served[best] = true;
    ++seats[best];
    --left;
  }
  return seats;
}

inline std::vector<size_t> brute_samples_contrast(const std::vector<ScoredSample>& s, SortOrder order,
                                                  const LabelDistribution& d, int batch_size) {
  const size_t n = s.size();
  const size_t bs = batch_size == 0 ? std::max<size_t>(n, 1) : static_cast<size_t>(batch_size);
  size_t majority = 0;
  for (size_t l = 1; l < d.proportions.size(); ++l) {
    if (d.proportions[l] > d.proportions[majority]) majority = l;
  }
  std::vector<size_t> out(n, majority);
  if (bs < d.labels.size()) return out;
  for (size_t start = 0; start < n; start += bs) {
    std::vector<size_t> idx;
    for (size_t i = start; i < n && i < start + bs; ++i) idx.push_back(i);
    const auto seats = brute_seats(static_cast<int>(idx.size()), d.proportions);
    for (size_t i : idx) {
      size_t r = brute_rank(s, idx, i, order);
      size_t label = 0;
      while (r >= static_cast<size_t>(seats[label])) r -= static_cast<size_t>(seats[label++]);
      out[i] = label;
    }
  }
  return out;
}

/// Cut points at the midpoint between the c-th and (c+1)-th smallest dev
/// probability, c running over cumulative class counts with classes ordered
/// by mean probability. Order statistics come from pairwise counting.
inline std::vector<double> brute_threshold_cuts(const std::vector<ScoredSample>& dev,
                                                const std::vector<std::string>& labels) {
  std::vector<double> mean(labels.size(), 0.0);
  std::vector<size_t> count(labels.size(), 0);
  for (const auto& s : dev) {
    for (size_t l = 0; l < labels.size(); ++l) {
      if (*s.gold == labels[l]) {
        mean[l] += s.q[0];
        ++count[l];
      }
    }
  }
  std::vector<size_t> present;
  for (size_t l = 0; l < labels.size(); ++l) {
    if (count[l] > 0) {
      mean[l] /= static_cast<double>(count[l]);
      present.push_back(l);
    }
  }
  // Selection by repeated minimum keeps this independent of std::sort.
  std::vector<size_t> ordered;
  std::vector<bool> taken(labels.size(), false);
  for (size_t k = 0; k < present.size(); ++k) {
    size_t best = labels.size();
    for (size_t l : present) {
      if (!taken[l] && (best == labels.size() || mean[l] < mean[best])) best = l;
    }
    taken[best] = true;
    ordered.push_back(best);
  }
  auto order_stat = [&](size_t k) {
    for (size_t i = 0; i < dev.size(); ++i) {
      size_t below = 0, equal_before = 0;
      for (size_t j = 0; j < dev.size(); ++j) {
        if (dev[j].q[0] < dev[i].q[0]) ++below;
        if (j < i && dev[j].q[0] == dev[i].q[0]) ++equal_before;
      }
      if (below + equal_before == k) return dev[i].q[0];
    }
    return std::nan("");
  };
  std::vector<double> cuts;
  size_t c = 0;
  for (size_t k = 0; k + 1 < ordered.size(); ++k) {
    c += count[ordered[k]];
    cuts.push_back(0.5 * (order_stat(c - 1) + order_stat(c)));
  }
  return cuts;
}

/// Random label distribution over `labels` classes with proportions that
/// are multiples of 1/denominator, so validation's unit-sum check holds.
inline LabelDistribution random_distribution(std::mt19937_64& rng, size_t labels) {
  LabelDistribution d;
  std::vector<int> weights(labels);
  int total = 0;
  for (auto& w : weights) total += w = std::uniform_int_distribution<int>(1, 6)(rng);
  for (size_t l = 0; l < labels; ++l) {
    d.labels.push_back("L" + std::to_string(l));
    d.proportions.push_back(static_cast<double>(weights[l]) / total);
  }
  double sum = 0.0;
  for (size_t l = 0; l + 1 < labels; ++l) sum += d.proportions[l];
  d.proportions.back() = 1.0 - sum;
  return d;
}

}  // namespace nspbert::testing
