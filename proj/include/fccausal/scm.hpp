#pragma once

#include <cstdint>
#include <vector>

namespace fccausal::scm {

// Linear-Gaussian confounder:
//   Z := e3,  X := b1 * Z + e1,  Y := b2 * Z + direct_effect * X + e2
// with independent zero-mean noises. direct_effect = 0 gives the classic
// spurious-correlation example where X and Y share only the cause Z.
struct LinearScm {
  double b1 = 1.0;
  double b2 = 1.0;
  double var_x = 1.0;  // variance of e1
  double var_y = 1.0;  // variance of e2
  double var_z = 1.0;  // variance of e3
  double direct_effect = 0.0;
  std::uint64_t seed = 0;
};

struct Draw {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

std::vector<Draw> sample(const LinearScm& scm, std::size_t n);

// Y under do(X = x): X's assignment is replaced by the constant.
std::vector<double> intervene_sample(const LinearScm& scm, double do_value, std::size_t n);

struct AceEstimate {
  double ace = 0.0;
  double standard_error = 0.0;
};

// E[Y | do(X = x1)] - E[Y | do(X = x0)] by Monte Carlo. Each arm uses its
// own noise stream unless common_random_numbers is set, in which case both
// arms replay scm.seed (so x1 == x0 gives exactly 0).
AceEstimate ace_do(const LinearScm& scm, double x1, double x0, std::size_t n,
                   bool common_random_numbers = false);

double correlation(const std::vector<double>& a, const std::vector<double>& b);
double mean(const std::vector<double>& v);
double sample_variance(const std::vector<double>& v);

// Analytic corr(X, Y) without intervention.
double analytic_correlation(const LinearScm& scm);

}  // namespace fccausal::scm
