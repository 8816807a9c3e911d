#include "fccausal/scm.hpp"

#include <cmath>
#include <random>

#include "fccausal/errors.hpp"

namespace fccausal::scm {
namespace {

// Zero variance must produce exact zeros; normal_distribution needs sd > 0.
class Noise {
 public:
  explicit Noise(double variance)
      : sd_(std::sqrt(variance)), dist_(0.0, variance > 0.0 ? std::sqrt(variance) : 1.0) {
    if (variance < 0.0) throw ConfigError("noise variance must be >= 0");
  }
  double operator()(std::mt19937_64& rng) { return sd_ > 0.0 ? dist_(rng) : 0.0; }

 private:
  double sd_;
  std::normal_distribution<double> dist_;
};

std::uint64_t arm_seed(std::uint64_t seed, std::uint64_t arm) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(arm)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

void check_n(std::size_t n) {
  if (n < 1) throw PreconditionError("scm: n must be >= 1");
}

std::vector<double> intervene_with_seed(const LinearScm& scm, double do_value, std::size_t n,
                                        std::uint64_t seed) {
  check_n(n);
  std::mt19937_64 rng(seed);
  Noise e1(scm.var_x), e2(scm.var_y), e3(scm.var_z);
  std::vector<double> ys;
  ys.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Same draw order as sample(); e1 is drawn and discarded so both
    // streams stay aligned.
    const double z = e3(rng);
    (void)e1(rng);
    const double x = do_value;
    ys.push_back(scm.b2 * z + scm.direct_effect * x + e2(rng));
  }
  return ys;
}

}  // namespace

std::vector<Draw> sample(const LinearScm& scm, std::size_t n) {
  check_n(n);
  std::mt19937_64 rng(scm.seed);
  Noise e1(scm.var_x), e2(scm.var_y), e3(scm.var_z);
  std::vector<Draw> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Draw d;
    d.z = e3(rng);
    d.x = scm.b1 * d.z + e1(rng);
    d.y = scm.b2 * d.z + scm.direct_effect * d.x + e2(rng);
    out.push_back(d);
  }
  return out;
}

std::vector<double> intervene_sample(const LinearScm& scm, double do_value, std::size_t n) {
  return intervene_with_seed(scm, do_value, n, scm.seed);
}

AceEstimate ace_do(const LinearScm& scm, double x1, double x0, std::size_t n,
                   bool common_random_numbers) {
  const std::uint64_t s1 = common_random_numbers ? scm.seed : arm_seed(scm.seed, 1);
  const std::uint64_t s0 = common_random_numbers ? scm.seed : arm_seed(scm.seed, 0);
  const auto y1 = intervene_with_seed(scm, x1, n, s1);
  const auto y0 = intervene_with_seed(scm, x0, n, s0);
  AceEstimate est;
  est.ace = mean(y1) - mean(y0);
  const double dn = static_cast<double>(n);
  if (common_random_numbers) {
    std::vector<double> diff(n);
    for (std::size_t i = 0; i < n; ++i) diff[i] = y1[i] - y0[i];
    est.standard_error = n > 1 ? std::sqrt(sample_variance(diff) / dn) : 0.0;
  } else {
    est.standard_error =
        n > 1 ? std::sqrt(sample_variance(y1) / dn + sample_variance(y0) / dn) : 0.0;
  }
  return est;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) throw PreconditionError("mean of empty vector");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) throw PreconditionError("variance needs at least 2 values");
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ShapeError("correlation: bad lengths");
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double analytic_correlation(const LinearScm& s) {
  // Var/Cov of X = b1 Z + e1 and Y = (b2 + w b1) Z + w e1 + e2.
  const double w = s.direct_effect;
  const double var_x = s.b1 * s.b1 * s.var_z + s.var_x;
  const double cz = s.b2 + w * s.b1;
  const double var_y = cz * cz * s.var_z + w * w * s.var_x + s.var_y;
  const double cov = s.b1 * cz * s.var_z + w * s.var_x;
  if (var_x == 0.0 || var_y == 0.0) return 0.0;
  return cov / std::sqrt(var_x * var_y);
}

}  // namespace fccausal::scm
