#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "cardio/eval.hpp"

namespace cardio::eval {

double mean(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean of empty vector");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty vector");
  const auto n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

double statistic_of(const std::vector<double>& v, Statistic s) {
  return s == Statistic::Median ? median(v) : mean(v);
}

}  // namespace

Interval bootstrap_ci(const std::vector<double>& values, Statistic statistic, std::size_t resamples,
                      std::uint64_t seed, double level) {
  if (values.empty()) throw std::invalid_argument("bootstrap_ci: no values");
  if (resamples == 0) throw std::invalid_argument("bootstrap_ci: resamples must be positive");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("bootstrap_ci: level must be in (0, 1)");
  if (statistic == Statistic::Proportion) {
    for (double v : values) {
      if (v != 0.0 && v != 1.0) throw std::invalid_argument("bootstrap_ci: proportion needs 0/1 values");
    }
  }
  const auto n = values.size();
  std::mt19937_64 gen(seed);
  std::vector<double> stats;
  stats.reserve(resamples);
  std::vector<double> sample(n);
  for (std::size_t r = 0; r < resamples; ++r) {
    for (auto& s : sample) {
      const double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;
      s = values[static_cast<std::size_t>(u * static_cast<double>(n))];
    }
    stats.push_back(statistic_of(sample, statistic));
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = (1.0 - level) / 2.0;
  return {percentile(stats, alpha), percentile(stats, 1.0 - alpha)};
}

double mcnemar(std::uint64_t b, std::uint64_t c) {
  const auto n = b + c;
  if (n == 0) return 1.0;
  if (n < 25) {
    // P(X >= k) for X ~ Binomial(n, 1/2) with exact integer coefficients.
    const auto k = std::max(b, c);
    std::uint64_t coef = 1;  // C(n, 0)
    std::uint64_t tail = 0;
    for (std::uint64_t i = 0; i <= n; ++i) {
      if (i >= k) tail += coef;
      coef = coef * (n - i) / (i + 1);
    }
    const double p = 2.0 * static_cast<double>(tail) / std::ldexp(1.0, static_cast<int>(n));
    return std::min(1.0, p);
  }
  const double diff = std::abs(static_cast<double>(b) - static_cast<double>(c)) - 1.0;
  const double x = diff * diff / static_cast<double>(n);
  return std::erfc(std::sqrt(x / 2.0));
}

namespace {

std::vector<double> midranks(const std::vector<double>& pooled) {
  std::vector<std::size_t> order(pooled.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return pooled[a] < pooled[b]; });
  std::vector<double> ranks(pooled.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

// Number of n-subsets of {1..N} per value of U = (rank sum) - n(n+1)/2.
std::vector<double> u_distribution(std::size_t n, std::size_t m) {
  // f[j][u]: ways to pick j of the items seen so far with U contribution u.
  const std::size_t umax = n * m;
  std::vector<std::vector<double>> f(n + 1, std::vector<double>(umax + 1, 0.0));
  f[0][0] = 1.0;
  for (std::size_t item = 0; item < n + m; ++item) {
    for (std::size_t j = std::min(n, item + 1); j >= 1; --j) {
      // Choosing item as the j-th x sample adds (item - (j - 1)) y-values below it.
      const std::size_t below = item - (j - 1);
      if (item + 1 < j || below > m) continue;
      for (std::size_t u = umax; u + 1 > below; --u) f[j][u] += f[j - 1][u - below];
    }
  }
  return f[n];
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

MannWhitney mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y, MwMethod method) {
  if (x.empty() || y.empty()) throw std::invalid_argument("mann_whitney_u: both samples must be non-empty");
  const auto n = x.size();
  const auto m = y.size();
  std::vector<double> pooled(x);
  pooled.insert(pooled.end(), y.begin(), y.end());
  for (double v : pooled) {
    if (!std::isfinite(v)) throw std::invalid_argument("mann_whitney_u: non-finite value");
  }
  const auto ranks = midranks(pooled);
  double rx = 0.0;
  for (std::size_t i = 0; i < n; ++i) rx += ranks[i];

  MannWhitney out;
  out.u_x = rx - static_cast<double>(n) * static_cast<double>(n + 1) / 2.0;
  out.u_y = static_cast<double>(n) * static_cast<double>(m) - out.u_x;

  std::map<double, std::size_t> ties;
  for (double v : pooled) ++ties[v];
  const bool has_ties = ties.size() < pooled.size();

  bool exact = false;
  switch (method) {
    case MwMethod::Auto: exact = !has_ties && n + m <= 16; break;
    case MwMethod::Exact:
      if (has_ties) throw std::invalid_argument("mann_whitney_u: exact method requires tie-free samples");
      exact = true;
      break;
    case MwMethod::Normal: exact = false; break;
  }
  out.exact = exact;

  if (exact) {
    const auto dist = u_distribution(n, m);
    const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
    const auto u = static_cast<std::size_t>(std::llround(out.u_x));
    double lower = 0.0;
    double upper = 0.0;
    for (std::size_t k = 0; k < dist.size(); ++k) {
      if (k <= u) lower += dist[k];
      if (k >= u) upper += dist[k];
    }
    out.p = std::min(1.0, 2.0 * std::min(lower, upper) / total);
    return out;
  }

  const double nn = static_cast<double>(n);
  const double mm = static_cast<double>(m);
  const double big_n = nn + mm;
  double tie_term = 0.0;
  for (const auto& [_, t] : ties) {
    const double tt = static_cast<double>(t);
    tie_term += tt * tt * tt - tt;
  }
  const double var = nn * mm / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
  if (var <= 0.0) {
    out.p = 1.0;
    return out;
  }
  const double mu = nn * mm / 2.0;
  const double z = std::max(0.0, std::abs(out.u_x - mu) - 0.5) / std::sqrt(var);
  out.p = std::min(1.0, 2.0 * normal_sf(z));
  return out;
}

LikertStats likert_stats(const std::vector<LikertScore>& scores, std::uint64_t seed) {
  if (scores.empty()) throw std::invalid_argument("likert_stats: no scores");
  std::vector<double> v;
  v.reserve(scores.size());
  for (const auto& s : scores) v.push_back(static_cast<double>(s.value));
  LikertStats out;
  out.n = v.size();
  out.mean = mean(v);
  out.median = median(v);
  out.mean_ci = bootstrap_ci(v, Statistic::Mean, 5000, seed);
  out.median_ci = bootstrap_ci(v, Statistic::Median, 5000, seed);
  return out;
}

}  // namespace cardio::eval
