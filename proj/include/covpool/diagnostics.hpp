#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "covpool/mat.hpp"
#include "covpool/spectral.hpp"
#include "covpool/sym_eig.hpp"

namespace covpool {

// lambda_max / lambda_min. A nonpositive lambda_min is reported as an
// infinite sentinel with the flag set, never an exception: rank-deficient
// pooled covariances are an expected operating condition.
struct CondNumber {
  double value = 0.0;
  bool rank_deficient = false;
};

inline CondNumber condition_number(const std::vector<double>& lambda) {
  if (lambda.empty())
    throw std::invalid_argument("condition_number: empty spectrum");
  const double lmax = lambda.front();
  const double lmin = lambda.back();
  if (lmin <= 0.0)
    return {std::numeric_limits<double>::infinity(), true};
  return {lmax / lmin, false};
}

inline CondNumber condition_number(const SymEig& eig) {
  return condition_number(eig.lambda);
}

// ||log P1 - log P2||_F. Invariant under joint positive rescaling because
// log(aP) = log P + ln(a) I on both sides.
inline double log_euclidean_dist(const Mat& p1, const Mat& p2) {
  require_same_shape(p1, p2, "log_euclidean_dist");
  const Mat l1 = mat_fn(sym_eig(p1), SpectralFn::log());
  const Mat l2 = mat_fn(sym_eig(p2), SpectralFn::log());
  return fro_norm(sub(l1, l2));
}

// Share of spectral energy past the split index: sum_{i >= t} lambda_i over
// sum_i lambda_i, for lambda sorted non-increasing and t in [0, d].
inline double energy_fraction(const std::vector<double>& lambda,
                              std::size_t t) {
  if (t > lambda.size())
    throw std::invalid_argument("energy_fraction: t = " + std::to_string(t) +
                                " exceeds d = " +
                                std::to_string(lambda.size()));
  for (std::size_t i = 0; i + 1 < lambda.size(); ++i)
    if (lambda[i] < lambda[i + 1])
      throw std::invalid_argument(
          "energy_fraction: spectrum not sorted non-increasing");
  double total = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    total += lambda[i];
    if (i >= t) tail += lambda[i];
  }
  if (total == 0.0)
    throw std::domain_error("energy_fraction: zero spectrum");
  return tail / total;
}

// Default large/small split: the leading 80% of eigenpairs count as large.
inline std::size_t ratio_split(std::size_t d) {
  return (4 * d + 4) / 5;  // ceil(0.8 d)
}

// Energy split: smallest t whose trailing eigenvalues carry less than `frac`
// of the total energy. Useful when the ratio default lands inside a cluster
// of comparable eigenvalues instead of at the spectral gap.
inline std::size_t energy_split(const std::vector<double>& lambda,
                                double frac = 1e-3) {
  for (std::size_t t = 0; t <= lambda.size(); ++t)
    if (energy_fraction(lambda, t) < frac) return t;
  return lambda.size();
}

// Pooled eigenvalue histogram over log2-spaced bins. edges[0] = 0 opens an
// underflow bin that collects nonpositive eigenvalues; the remaining `bins`
// edges span [min positive, max positive] geometrically. counts.size() ==
// edges.size() - 1 and the counts sum to the number of eigenvalues seen.
struct SpectrumHistogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
};

inline SpectrumHistogram spectrum_histogram(
    const std::vector<std::vector<double>>& spectra, std::size_t bins) {
  if (bins < 1)
    throw std::invalid_argument("spectrum_histogram: bins must be >= 1");
  double pmin = std::numeric_limits<double>::infinity();
  double pmax = 0.0;
  std::size_t total = 0;
  for (const auto& sp : spectra) {
    for (double v : sp) {
      ++total;
      if (v > 0.0) {
        pmin = std::min(pmin, v);
        pmax = std::max(pmax, v);
      }
    }
  }
  if (total == 0)
    throw std::invalid_argument("spectrum_histogram: no eigenvalues");
  if (!(pmax > 0.0))
    throw std::domain_error("spectrum_histogram: no positive eigenvalues");
  if (pmax <= pmin) pmax = pmin * 2.0;  // degenerate single-value spectrum

  const double lo = std::log2(pmin);
  const double width = (std::log2(pmax) - lo) / static_cast<double>(bins);
  SpectrumHistogram h;
  h.edges.resize(bins + 2);
  h.edges[0] = 0.0;
  for (std::size_t j = 0; j <= bins; ++j)
    h.edges[1 + j] = std::exp2(lo + width * static_cast<double>(j));
  h.edges[1] = pmin;
  h.edges[bins + 1] = pmax;
  h.counts.assign(bins + 1, 0);

  for (const auto& sp : spectra) {
    for (double v : sp) {
      if (v <= 0.0) {
        ++h.counts[0];
        continue;
      }
      long j = static_cast<long>(std::floor((std::log2(v) - lo) / width));
      if (j < 0) j = 0;
      if (j >= static_cast<long>(bins)) j = static_cast<long>(bins) - 1;
      ++h.counts[1 + static_cast<std::size_t>(j)];
    }
  }
  return h;
}

}  // namespace covpool
