#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace locodec {

// Throws UndefinedCorrelationError when either input is constant.
double pearson_r(std::span<const double> a, std::span<const double> b);
// 1 - SS_res / SS_tot, SS_tot taken about the mean of `actual`.
double r_squared(std::span<const double> pred, std::span<const double> actual);

struct TestOutcome {
  double statistic = 0.0;
  double p_raw = 1.0;
  double p_adjusted = 1.0;
  std::size_t n = 0;
  std::string method;
};

// Royston's polynomial approximation (AS R94). Requires 3 <= n <= 5000.
TestOutcome shapiro_wilk(std::span<const double> x);

// Rows are sessions, columns are decoding variants.
struct PairedScores {
  std::vector<std::string> variants;
  std::vector<std::vector<double>> rows;
  std::string metric = "r";
};

// Average ranks (1-based) with ties sharing the mean rank.
std::vector<double> average_ranks(std::span<const double> x);

// Chi-square on within-row ranks with tie correction, df = k - 1.
TestOutcome friedman(const PairedScores& scores);

enum class ZeroMethod { wilcox, pratt };
enum class WilcoxonMethod { automatic, exact, normal };

inline constexpr std::size_t kWilcoxonExactMaxN = 25;

// Two-sided signed-rank test. The statistic is min(W+, W-). `automatic`
// uses the exact permutation distribution up to kWilcoxonExactMaxN nonzero
// differences and the tie-corrected normal approximation (with continuity
// correction) above.
TestOutcome wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                 ZeroMethod zeros = ZeroMethod::wilcox,
                                 WilcoxonMethod method = WilcoxonMethod::automatic);

std::vector<double> bonferroni(std::span<const double> p_raw, std::size_t m);

struct MedianCi {
  double median = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile interval over `n_boot` resampled medians.
MedianCi bootstrap_median_ci(std::span<const double> x, std::size_t n_boot, double level,
                             std::uint64_t seed);

// Least-squares quadratic; returns {c0, c1, c2} for y = c0 + c1 x + c2 x^2.
std::array<double, 3> polyfit2(std::span<const double> xs, std::span<const double> ys);

struct ComparisonRow {
  std::string comparison;
  std::string metric;
  TestOutcome outcome;
};

// Advisory Shapiro-Wilk per variant, Friedman across variants, then pairwise
// Bonferroni-corrected Wilcoxon tests when Friedman is significant at alpha.
// With exactly two variants only the Wilcoxon test is run (m = 1). Fewer
// than two variants yields no rows.
std::vector<ComparisonRow> compare_variants(const PairedScores& scores, double alpha = 0.05);
std::string comparison_csv(std::span<const ComparisonRow> rows);

}  // namespace locodec
