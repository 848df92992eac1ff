#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdzd/rational.hpp"

namespace pdzd {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

enum class SignalKind { Sinusoid, Square, Triangle };

inline std::string to_string(SignalKind k) {
  switch (k) {
    case SignalKind::Sinusoid: return "sinusoid";
    case SignalKind::Square: return "square";
    case SignalKind::Triangle: return "triangle";
  }
  return "?";
}

/// Mean square of the unit signal over one period.
inline double eta_d(SignalKind k) {
  switch (k) {
    case SignalKind::Sinusoid: return 0.5;
    case SignalKind::Square: return 1.0;
    case SignalKind::Triangle: return 1.0 / 3.0;
  }
  return 0.0;
}

/// Unit periodic probing signal, period 2*pi, max 1, zero mean.
/// Square intervals are right-open: 1 on [2k*pi, (2k+1)*pi), -1 after.
inline double signal_value(SignalKind kind, double t) {
  switch (kind) {
    case SignalKind::Sinusoid:
      return std::sin(t);
    case SignalKind::Square: {
      double u = std::fmod(t, kTwoPi);
      if (u < 0) u += kTwoPi;
      return u < 0.5 * kTwoPi ? 1.0 : -1.0;
    }
    case SignalKind::Triangle: {
      double u = std::fmod(t, kTwoPi);
      if (u < 0) u += kTwoPi;
      const double pi = 0.5 * kTwoPi;
      if (u < 0.5 * pi) return 2.0 * u / pi;
      if (u < 1.5 * pi) return 2.0 - 2.0 * u / pi;
      return 2.0 * u / pi - 4.0;
    }
  }
  return 0.0;
}

/// Whether the signal's harmonic content is odd-only, in which case
/// odd-integer frequency ratios break orthogonality.
inline bool has_odd_harmonics_only(SignalKind k) {
  return k == SignalKind::Square || k == SignalKind::Triangle;
}

struct OrthogonalityReport {
  struct PairAudit {
    int i = 0, j = 0;
    double period = 0.0;
    double integral = 0.0;
    bool flagged = false;
  };
  /// No rule violations and no quadrature flags: the plan is orthogonal.
  bool ok = true;
  /// No rule violations. Plans with odd-only spectra (square, triangle) can
  /// still carry higher-harmonic collisions that only the quadrature audit
  /// catches; those are flagged but do not make the plan inadmissible.
  bool admissible = true;
  std::vector<std::string> violations;
  std::vector<std::string> quadrature_flags;
  std::vector<PairAudit> audits;
};

/// Dither plan: one rational frequency multiplier per probed coordinate,
/// shared amplitude eps_a and timescale eps_omega.
class ProbingPlan {
 public:
  ProbingPlan(SignalKind kind, double eps_a, double eps_omega, std::vector<Rational> kappa)
      : kind_(kind), eps_a_(eps_a), eps_omega_(eps_omega), kappa_(std::move(kappa)) {
    if (eps_a_ <= 0) throw std::invalid_argument("probing plan: eps_a must be positive");
    if (eps_omega_ <= 0) throw std::invalid_argument("probing plan: eps_omega must be positive");
    for (const auto& k : kappa_)
      if (!k.positive()) throw std::invalid_argument("probing plan: kappa must be positive");
  }

  SignalKind kind() const { return kind_; }
  double eps_a() const { return eps_a_; }
  double eps_omega() const { return eps_omega_; }
  const std::vector<Rational>& kappa() const { return kappa_; }
  int size() const { return static_cast<int>(kappa_.size()); }
  double eta() const { return eta_d(kind_); }

  double omega(int i) const { return kTwoPi * kappa_[i].value() / eps_omega_; }
  double max_kappa() const {
    double m = 0;
    for (const auto& k : kappa_) m = std::max(m, k.value());
    return m;
  }

  /// Period of component i: eps_omega * q_i / p_i.
  double component_period(int i) const {
    return eps_omega_ * kappa_[i].reciprocal().value();
  }

  Eigen::VectorXd probe_vector(double t) const {
    Eigen::VectorXd d(size());
    for (int i = 0; i < size(); ++i) d(i) = signal_value(kind_, omega(i) * t);
    return d;
  }

  /// Least common period of d(w_i t) d(w_j t), exact in rational arithmetic:
  /// eps_omega * lcm(q_i, q_j) / gcd(p_i, p_j). Also valid for i == j.
  double common_period(int i, int j) const {
    const Rational r = Rational::lcm(kappa_[i].reciprocal(), kappa_[j].reciprocal());
    return eps_omega_ * r.value();
  }

  /// Common period of all probe components.
  double common_period() const {
    if (kappa_.empty()) throw std::invalid_argument("common_period: empty plan");
    Rational r = kappa_[0].reciprocal();
    for (int i = 1; i < size(); ++i) r = Rational::lcm(r, kappa_[i].reciprocal());
    return eps_omega_ * r.value();
  }

  /// Breakpoints (discontinuities / slope changes) of component i within
  /// [0, length]; empty for the sinusoid.
  std::vector<double> component_breakpoints(int i, double length) const {
    std::vector<double> pts;
    if (kind_ == SignalKind::Sinusoid) return pts;
    const double ti = component_period(i);
    // square switches at multiples of T/2; triangle bends at T/4 + k T/2
    const double start = kind_ == SignalKind::Square ? 0.0 : 0.25 * ti;
    for (double t = start; t < length; t += 0.5 * ti) pts.push_back(t);
    return pts;
  }

 private:
  SignalKind kind_;
  double eps_a_;
  double eps_omega_;
  std::vector<Rational> kappa_;
};

namespace detail {

/// Visits 5-point Gauss-Legendre nodes covering [0, length], with panels
/// laid out cell-by-cell between the supplied breakpoints and never longer
/// than max_panel. Calls visit(t, quadrature_weight) at every node. Exact
/// for the piecewise-polynomial square/triangle products.
inline void for_each_quadrature_node(double length, std::vector<double> breakpoints,
                                     double max_panel,
                                     const std::function<void(double, double)>& visit) {
  breakpoints.push_back(0.0);
  breakpoints.push_back(length);
  std::sort(breakpoints.begin(), breakpoints.end());
  breakpoints.erase(std::unique(breakpoints.begin(), breakpoints.end(),
                                [&](double a, double b) { return b - a < 1e-15 * length; }),
                    breakpoints.end());
  static const double node[5] = {-0.906179845938663992797626878299,
                                 -0.538469310105683091036314420700, 0.0,
                                 0.538469310105683091036314420700,
                                 0.906179845938663992797626878299};
  static const double weight[5] = {0.236926885056189087514264040720,
                                   0.478628670499366468041291514836,
                                   0.568888888888888888888888888889,
                                   0.478628670499366468041291514836,
                                   0.236926885056189087514264040720};
  for (std::size_t c = 0; c + 1 < breakpoints.size(); ++c) {
    const double a = breakpoints[c], b = breakpoints[c + 1];
    if (b <= a) continue;
    const int panels = std::max(1, static_cast<int>(std::ceil((b - a) / max_panel)));
    const double h = (b - a) / panels;
    for (int p = 0; p < panels; ++p) {
      const double mid = a + (p + 0.5) * h;
      for (int q = 0; q < 5; ++q) visit(mid + 0.5 * h * node[q], 0.5 * h * weight[q]);
    }
  }
}

inline double integrate_with_breakpoints(const std::function<double(double)>& fn, double length,
                                         std::vector<double> breakpoints, double max_panel) {
  double total = 0.0;
  for_each_quadrature_node(length, std::move(breakpoints), max_panel,
                           [&](double t, double w) { total += w * fn(t); });
  return total;
}

}  // namespace detail

/// Integral of d(w_i t) d(w_j t) over the pair's exact common period.
inline double cross_integral(const ProbingPlan& plan, int i, int j) {
  const double period = plan.common_period(i, j);
  std::vector<double> brk = plan.component_breakpoints(i, period);
  const std::vector<double> brk_j = plan.component_breakpoints(j, period);
  brk.insert(brk.end(), brk_j.begin(), brk_j.end());
  const double fast = std::min(plan.component_period(i), plan.component_period(j));
  const double wi = plan.omega(i), wj = plan.omega(j);
  const SignalKind kind = plan.kind();
  return detail::integrate_with_breakpoints(
      [&](double t) { return signal_value(kind, wi * t) * signal_value(kind, wj * t); }, period,
      std::move(brk), fast / 64.0);
}

/// Algebraic rule check (distinct kappa; odd-harmonic exclusion for signals
/// with odd-only spectra) plus a quadrature audit of every pair over its
/// exact common period. Violations are reported, never thrown.
inline OrthogonalityReport validate_orthogonality(const ProbingPlan& plan) {
  OrthogonalityReport report;
  const auto& kappa = plan.kappa();
  for (int i = 0; i < plan.size(); ++i) {
    for (int j = i + 1; j < plan.size(); ++j) {
      if (kappa[i] == kappa[j]) {
        report.ok = false;
        report.admissible = false;
        report.violations.push_back("kappa[" + std::to_string(i) + "] == kappa[" +
                                    std::to_string(j) + "] == " + kappa[i].str());
      } else if (has_odd_harmonics_only(plan.kind()) &&
                 (kappa[i].is_odd_multiple_of(kappa[j]) ||
                  kappa[j].is_odd_multiple_of(kappa[i]))) {
        report.ok = false;
        report.admissible = false;
        report.violations.push_back("odd-harmonic pair for " + to_string(plan.kind()) +
                                    " signal: kappa[" + std::to_string(i) + "]=" +
                                    kappa[i].str() + ", kappa[" + std::to_string(j) +
                                    "]=" + kappa[j].str());
      }
      OrthogonalityReport::PairAudit audit;
      audit.i = i;
      audit.j = j;
      audit.period = plan.common_period(i, j);
      audit.integral = cross_integral(plan, i, j);
      audit.flagged = std::fabs(audit.integral) > 1e-8 * audit.period;
      if (audit.flagged) {
        report.ok = false;
        report.quadrature_flags.push_back(
            "quadrature audit: |integral(d_i d_j)| = " + std::to_string(audit.integral) +
            " over period " + std::to_string(audit.period) + " for pair (" + std::to_string(i) +
            "," + std::to_string(j) + ")");
      }
      report.audits.push_back(audit);
    }
  }
  return report;
}

/// Mean and mean-square of the unit signal over one 2*pi period,
/// by the same breakpoint-aware quadrature.
inline std::pair<double, double> signal_moments(SignalKind kind) {
  std::vector<double> brk;
  if (kind == SignalKind::Square) brk = {0.5 * kTwoPi};
  if (kind == SignalKind::Triangle) brk = {0.25 * kTwoPi, 0.75 * kTwoPi};
  const double mean = detail::integrate_with_breakpoints(
                          [&](double t) { return signal_value(kind, t); }, kTwoPi, brk,
                          kTwoPi / 512.0) /
                      kTwoPi;
  const double ms = detail::integrate_with_breakpoints(
                        [&](double t) {
                          const double v = signal_value(kind, t);
                          return v * v;
                        },
                        kTwoPi, brk, kTwoPi / 512.0) /
                    kTwoPi;
  return {mean, ms};
}

}  // namespace pdzd
