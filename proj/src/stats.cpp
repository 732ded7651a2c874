#include "locodec/stats.hpp"

#include "locodec/error.hpp"
#include "locodec/io.hpp"
#include "locodec/numeric.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace locodec {

double pearson_r(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("pearson_r: length mismatch");
  if (a.size() < 2) throw ArgumentError("pearson_r: need at least 2 points");
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw UndefinedCorrelationError("pearson_r: constant input");
  const double r = sab / std::sqrt(saa * sbb);
  return std::clamp(r, -1.0, 1.0);
}

double r_squared(std::span<const double> pred, std::span<const double> actual) {
  if (pred.size() != actual.size()) throw ArgumentError("r_squared: length mismatch");
  if (actual.size() < 2) throw ArgumentError("r_squared: need at least 2 points");
  const double m = mean(actual);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    ss_res += (actual[i] - pred[i]) * (actual[i] - pred[i]);
    ss_tot += (actual[i] - m) * (actual[i] - m);
  }
  if (ss_tot == 0.0) throw UndefinedCorrelationError("r_squared: constant actual values");
  return 1.0 - ss_res / ss_tot;
}

// ---------------------------------------------------------------------------
// Shapiro-Wilk

namespace {

double poly(const double* c, int n, double x) {
  double r = c[n - 1];
  for (int i = n - 2; i >= 0; --i) r = r * x + c[i];
  return r;
}

double norm_ppf(double p) { return boost::math::quantile(boost::math::normal(), p); }
double norm_sf(double z) { return boost::math::cdf(boost::math::complement(boost::math::normal(), z)); }
double norm_cdf(double z) { return boost::math::cdf(boost::math::normal(), z); }

}  // namespace

TestOutcome shapiro_wilk(std::span<const double> x_in) {
  const std::size_t n = x_in.size();
  if (n < 3 || n > 5000) throw ArgumentError("shapiro_wilk: n must be in [3, 5000]");
  std::vector<double> x(x_in.begin(), x_in.end());
  std::sort(x.begin(), x.end());
  if (x.back() - x.front() < 1e-19 * std::max(1.0, std::abs(x.back())))
    throw DegenerateDataError("shapiro_wilk: all values are identical");

  const std::size_t half = n / 2;
  const double an = static_cast<double>(n);
  std::vector<double> a(half + 1, 0.0);  // 1-based, upper-half coefficients

  static const double c1[] = {0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056};
  static const double c2[] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
  if (n == 3) {
    a[1] = std::sqrt(0.5);
  } else {
    std::vector<double> m(half + 1);
    double summ2 = 0.0;
    for (std::size_t i = 1; i <= half; ++i) {
      m[i] = norm_ppf((static_cast<double>(i) - 0.375) / (an + 0.25));
      summ2 += m[i] * m[i];
    }
    summ2 *= 2.0;
    const double ssumm2 = std::sqrt(summ2);
    const double rsn = 1.0 / std::sqrt(an);
    const double a1 = poly(c1, 6, rsn) - m[1] / ssumm2;
    std::size_t i1;
    double fac;
    if (n > 5) {
      i1 = 3;
      const double a2 = -m[2] / ssumm2 + poly(c2, 6, rsn);
      fac = std::sqrt((summ2 - 2.0 * m[1] * m[1] - 2.0 * m[2] * m[2]) /
                      (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
      a[2] = a2;
    } else {
      i1 = 2;
      fac = std::sqrt((summ2 - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1));
    }
    a[1] = a1;
    for (std::size_t i = i1; i <= half; ++i) a[i] = -m[i] / fac;
  }

  const double mu = mean(x);
  double ssq = 0.0;
  for (double v : x) ssq += (v - mu) * (v - mu);
  double num = 0.0;
  for (std::size_t i = 1; i <= half; ++i) num += a[i] * (x[n - i] - x[i - 1]);
  double w = std::min(1.0, num * num / ssq);

  TestOutcome out;
  out.statistic = w;
  out.n = n;
  out.method = "shapiro_wilk";
  double pw;
  if (n == 3) {
    constexpr double pi6 = 1.90985931710274;
    constexpr double stqr = 1.04719755119660;
    pw = std::max(0.0, pi6 * (std::asin(std::sqrt(w)) - stqr));
  } else {
    static const double g[] = {-2.273, 0.459};
    static const double c3[] = {0.5440, -0.39978, 0.025054, -6.714e-4};
    static const double c4[] = {1.3822, -0.77857, 0.062767, -0.0020322};
    static const double c5[] = {-1.5861, -0.31082, -0.083751, 0.0038915};
    static const double c6[] = {-0.4803, -0.082676, 0.0030302};
    double w1 = std::log(1.0 - w);
    double m, s;
    bool tiny = false;
    if (n <= 11) {
      const double gamma = poly(g, 2, an);
      if (w1 >= gamma) {
        tiny = true;
        m = s = 0.0;
      } else {
        w1 = -std::log(gamma - w1);
        m = poly(c3, 4, an);
        s = std::exp(poly(c4, 4, an));
      }
    } else {
      const double xx = std::log(an);
      m = poly(c5, 4, xx);
      s = std::exp(poly(c6, 3, xx));
    }
    pw = tiny ? 1e-99 : norm_sf((w1 - m) / s);
  }
  out.p_raw = out.p_adjusted = std::clamp(pw, 0.0, 1.0);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

TestOutcome friedman(const PairedScores& scores) {
  const std::size_t n = scores.rows.size();
  if (n < 3) throw ArgumentError("friedman: need at least 3 sessions");
  const std::size_t k = scores.rows.front().size();
  if (k < 2) throw ArgumentError("friedman: need at least 2 variants");
  std::vector<double> rank_sum(k, 0.0);
  double tie_sum = 0.0;
  for (const auto& row : scores.rows) {
    if (row.size() != k) throw ShapeError("friedman: ragged score table");
    const auto r = average_ranks(row);
    for (std::size_t j = 0; j < k; ++j) rank_sum[j] += r[j];
    std::vector<double> sorted(row);
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < k;) {
      std::size_t j = i;
      while (j < k && sorted[j] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i);
      tie_sum += t * t * t - t;
      i = j;
    }
  }
  const double dn = static_cast<double>(n), dk = static_cast<double>(k);
  double ssr = 0.0;
  for (double r : rank_sum) ssr += r * r;
  const double raw = 12.0 / (dn * dk * (dk + 1.0)) * ssr - 3.0 * dn * (dk + 1.0);
  const double c = 1.0 - tie_sum / (dn * dk * (dk * dk - 1.0));
  TestOutcome out;
  out.n = n;
  out.method = "friedman";
  if (c <= 1e-12) {
    out.statistic = 0.0;
    out.p_raw = out.p_adjusted = 1.0;
    return out;
  }
  out.statistic = std::max(0.0, raw / c);
  boost::math::chi_squared chi(dk - 1.0);
  out.p_raw = out.p_adjusted =
      std::clamp(boost::math::cdf(boost::math::complement(chi, out.statistic)), 0.0, 1.0);
  return out;
}

TestOutcome wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                 ZeroMethod zeros, WilcoxonMethod method) {
  if (a.size() != b.size()) throw ArgumentError("wilcoxon_signed_rank: length mismatch");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];

  std::vector<double> mags, signs;
  if (zeros == ZeroMethod::wilcox) {
    for (double v : d)
      if (v != 0.0) {
        mags.push_back(std::abs(v));
        signs.push_back(v > 0 ? 1.0 : -1.0);
      }
  } else {
    for (double v : d) {
      mags.push_back(std::abs(v));
      signs.push_back(v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0));
    }
  }
  std::vector<double> ranks = average_ranks(mags);
  std::vector<double> r_nz;
  double w_plus = 0.0, w_minus = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (signs[i] == 0.0) continue;
    r_nz.push_back(ranks[i]);
    (signs[i] > 0 ? w_plus : w_minus) += ranks[i];
  }
  const std::size_t n = r_nz.size();
  if (n == 0) throw DegenerateDataError("wilcoxon_signed_rank: all differences are zero");

  TestOutcome out;
  out.n = n;
  out.statistic = std::min(w_plus, w_minus);
  const bool exact = method == WilcoxonMethod::exact ||
                     (method == WilcoxonMethod::automatic && n <= kWilcoxonExactMaxN);
  if (exact) {
    if (n > 60) throw ArgumentError("wilcoxon_signed_rank: exact method limited to n <= 60");
    // Ranks are multiples of 1/2, so doubled ranks are integers.
    std::vector<long> r2(n);
    long total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      r2[i] = std::lround(2.0 * r_nz[i]);
      total += r2[i];
    }
    std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
    count[0] = 1.0;
    long reach = 0;
    for (long r : r2) {
      for (long s = reach; s >= 0; --s) count[static_cast<std::size_t>(s + r)] += count[static_cast<std::size_t>(s)];
      reach += r;
    }
    const long t2 = std::lround(2.0 * out.statistic);
    double tail = 0.0;
    for (long s = 0; s <= t2; ++s) tail += count[static_cast<std::size_t>(s)];
    const double p = 2.0 * tail / std::ldexp(1.0, static_cast<int>(n));
    out.p_raw = std::min(1.0, p);
    out.method = "wilcoxon_exact";
  } else {
    double sum_r = 0.0, sum_r2 = 0.0;
    for (double r : r_nz) {
      sum_r += r;
      sum_r2 += r * r;
    }
    const double mu = sum_r / 2.0;
    const double sd = std::sqrt(sum_r2 / 4.0);
    double z = (out.statistic - mu + 0.5) / sd;
    z = std::min(z, 0.0);
    out.p_raw = std::min(1.0, 2.0 * norm_cdf(z));
    out.method = "wilcoxon_normal";
  }
  out.p_adjusted = out.p_raw;
  return out;
}

std::vector<double> bonferroni(std::span<const double> p_raw, std::size_t m) {
  if (m < p_raw.size()) throw ArgumentError("bonferroni: m must be >= number of p-values");
  std::vector<double> out;
  out.reserve(p_raw.size());
  for (double p : p_raw) out.push_back(std::min(1.0, p * static_cast<double>(m)));
  return out;
}

MedianCi bootstrap_median_ci(std::span<const double> x, std::size_t n_boot, double level,
                             std::uint64_t seed) {
  if (x.size() < 3) throw ArgumentError("bootstrap_median_ci: need at least 3 values");
  if (n_boot == 0) throw ArgumentError("bootstrap_median_ci: n_boot must be positive");
  if (!(level > 0.0 && level < 1.0)) throw ArgumentError("bootstrap_median_ci: level must be in (0, 1)");
  const std::size_t n = x.size();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> meds(n_boot), buf(n);
  for (std::size_t b = 0; b < n_boot; ++b) {
    for (auto& v : buf) v = x[pick(rng)];
    auto mid = buf.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(buf.begin(), mid, buf.end());
    double med = *mid;
    if (n % 2 == 0) med = 0.5 * (med + *std::max_element(buf.begin(), mid));
    meds[b] = med;
  }
  std::sort(meds.begin(), meds.end());
  const double tail = (1.0 - level) / 2.0;
  return {median(x), quantile_sorted(meds, tail), quantile_sorted(meds, 1.0 - tail)};
}

std::array<double, 3> polyfit2(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ArgumentError("polyfit2: length mismatch");
  std::vector<double> distinct(xs.begin(), xs.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 3) throw FitError("polyfit2: need at least 3 distinct x values");
  const auto n = static_cast<Eigen::Index>(xs.size());
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = xs[static_cast<std::size_t>(i)];
    design(i, 0) = 1.0;
    design(i, 1) = x;
    design(i, 2) = x * x;
    y(i) = ys[static_cast<std::size_t>(i)];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < 3) throw FitError("polyfit2: rank-deficient design");
  const Eigen::VectorXd c = qr.solve(y);
  return {c(0), c(1), c(2)};
}

// ---------------------------------------------------------------------------

std::vector<ComparisonRow> compare_variants(const PairedScores& scores, double alpha) {
  std::vector<ComparisonRow> rows;
  const std::size_t k = scores.variants.size();
  if (k < 2) return rows;
  PairedScores clean;
  clean.variants = scores.variants;
  clean.metric = scores.metric;
  for (const auto& r : scores.rows) {
    if (r.size() != k) throw ShapeError("compare_variants: ragged score table");
    if (std::all_of(r.begin(), r.end(), [](double v) { return std::isfinite(v); })) clean.rows.push_back(r);
  }
  if (clean.rows.size() < 3) return rows;

  auto column = [&](std::size_t j) {
    std::vector<double> c;
    for (const auto& r : clean.rows) c.push_back(r[j]);
    return c;
  };
  for (std::size_t j = 0; j < k; ++j) {
    try {
      rows.push_back({"normality:" + clean.variants[j], clean.metric, shapiro_wilk(column(j))});
    } catch (const DegenerateDataError&) {
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) pairs.emplace_back(i, j);

  bool run_pairs = true;
  if (k > 2) {
    const auto fr = friedman(clean);
    rows.push_back({"friedman:" + std::to_string(k) + "_variants", clean.metric, fr});
    run_pairs = fr.p_raw < alpha;
  }
  if (!run_pairs) return rows;
  const std::size_t m = pairs.size();
  for (const auto& [i, j] : pairs) {
    TestOutcome t;
    try {
      t = wilcoxon_signed_rank(column(i), column(j));
    } catch (const DegenerateDataError&) {
      t.method = "wilcoxon_degenerate";
      t.n = 0;
    }
    t.p_adjusted = std::min(1.0, t.p_raw * static_cast<double>(m));
    rows.push_back({clean.variants[i] + "_vs_" + clean.variants[j], clean.metric, t});
  }
  return rows;
}

std::string comparison_csv(std::span<const ComparisonRow> rows) {
  std::string out = "comparison,metric,statistic,p_raw,p_bonferroni,n,method\n";
  for (const auto& r : rows)
    out += r.comparison + "," + r.metric + "," + format_double(r.outcome.statistic) + "," +
           format_double(r.outcome.p_raw) + "," + format_double(r.outcome.p_adjusted) + "," +
           std::to_string(r.outcome.n) + "," + r.outcome.method + "\n";
  return out;
}

}  // namespace locodec
