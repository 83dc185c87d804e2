#include "xferlab/analysis/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xferlab/errors.hpp"
#include "xferlab/rng.hpp"

namespace xferlab::analysis {

namespace {

void check_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw PreconditionError("length mismatch: " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  if (x.size() < 3) throw PreconditionError("need at least 3 observations");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw InputError("observations must be finite");
}

double rank_correlation(std::span<const double> rx, std::span<const double> ry) {
  // Both rank vectors have mean (n+1)/2.
  const double mean = (static_cast<double>(rx.size()) + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double a = rx[i] - mean, b = ry[i] - mean;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw PreconditionError("pearson needs equal, non-empty inputs");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw PreconditionError("correlation undefined for a constant vector");
  return sxy / std::sqrt(sxx * syy);
}

double spearman_rho(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

PermutationTest permutation_test(std::span<const double> x, std::span<const double> y, std::size_t n_permutations,
                                 std::uint64_t seed) {
  PermutationTest out;
  out.rho = spearman_rho(x, y);
  out.n_permutations = n_permutations;
  out.degenerate = n_permutations == 0;
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double observed = std::abs(out.rho);
  // Guard against rounding making an identical permutation look smaller.
  const double bar = observed - 1e-12;
  std::size_t hits = 0;
  std::vector<double> perm(ry.size());
  for (std::size_t t = 0; t < n_permutations; ++t) {
    std::copy(ry.begin(), ry.end(), perm.begin());
    Rng rng(derive_seed(seed, t));
    rng.shuffle(std::span<double>(perm));
    if (std::abs(rank_correlation(rx, perm)) >= bar) ++hits;
  }
  out.p_value = (1.0 + static_cast<double>(hits)) / (1.0 + static_cast<double>(n_permutations));
  return out;
}

double permutation_pvalue(std::span<const double> x, std::span<const double> y, std::size_t n_permutations,
                          std::uint64_t seed) {
  return permutation_test(x, y, n_permutations, seed).p_value;
}

FiveNumber five_number(std::span<const double> values) {
  if (values.empty()) throw PreconditionError("summary of an empty set");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  auto q = [&](double f) {
    const double pos = f * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {v.front(), q(0.25), q(0.5), q(0.75), v.back()};
}

}  // namespace xferlab::analysis
