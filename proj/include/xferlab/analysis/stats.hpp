#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace xferlab::analysis {

/// 1-based ranks; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

double pearson(std::span<const double> x, std::span<const double> y);

/// Pearson correlation of average ranks. Needs |x| = |y| >= 3 and neither
/// side constant.
double spearman_rho(std::span<const double> x, std::span<const double> y);

struct PermutationTest {
  double rho = 0.0;
  double p_value = 1.0;
  std::size_t n_permutations = 0;
  bool degenerate = false;  // no permutations drawn
};

/// Two-sided: p = (1 + #{|rho_perm| >= |rho_obs|}) / (1 + n_permutations).
/// Trial t shuffles y with a generator seeded from (seed, t), so the result
/// does not depend on how trials are scheduled.
PermutationTest permutation_test(std::span<const double> x, std::span<const double> y,
                                 std::size_t n_permutations = 10000, std::uint64_t seed = 0);

double permutation_pvalue(std::span<const double> x, std::span<const double> y,
                          std::size_t n_permutations = 10000, std::uint64_t seed = 0);

struct FiveNumber {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

/// Quartiles by linear interpolation between order statistics.
FiveNumber five_number(std::span<const double> values);

}  // namespace xferlab::analysis
