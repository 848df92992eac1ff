#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>

namespace pdzd {

/// Exact non-negative rational p/q with q > 0, always stored reduced.
/// Probing frequency multipliers are kept as rationals so that common
/// periods and harmonic relations are decidable instead of float guesses.
class Rational {
 public:
  Rational() = default;

  Rational(std::int64_t num, std::int64_t den) : num_(num), den_(den) {
    if (den_ == 0) throw std::invalid_argument("Rational: zero denominator");
    if (den_ < 0) {
      num_ = -num_;
      den_ = -den_;
    }
    reduce();
  }

  static Rational from_integer(std::int64_t n) { return Rational(n, 1); }

  /// Parses "p/q", "p", or a decimal string such as "1.25".
  /// Decimal strings must reduce to a denominator <= max_den.
  static Rational parse(const std::string& text, std::int64_t max_den = 1000000) {
    const auto slash = text.find('/');
    if (slash != std::string::npos) {
      const std::int64_t p = std::stoll(text.substr(0, slash));
      const std::int64_t q = std::stoll(text.substr(slash + 1));
      return Rational(p, q);
    }
    const auto dot = text.find('.');
    if (dot == std::string::npos) return Rational(std::stoll(text), 1);
    std::string digits = text.substr(0, dot) + text.substr(dot + 1);
    const std::size_t frac_digits = text.size() - dot - 1;
    if (frac_digits > 18) throw std::invalid_argument("Rational: too many decimals: " + text);
    std::int64_t den = 1;
    for (std::size_t i = 0; i < frac_digits; ++i) den *= 10;
    Rational r(std::stoll(digits), den);
    if (r.den_ > max_den)
      throw std::invalid_argument("Rational: denominator of " + text + " exceeds limit");
    return r;
  }

  /// Best rational approximation with denominator <= max_den
  /// (continued-fraction expansion).
  static Rational from_double(double x, std::int64_t max_den = 1000000) {
    if (!std::isfinite(x)) throw std::invalid_argument("Rational: nonfinite value");
    const bool neg = x < 0;
    double r = std::fabs(x);
    std::int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
    for (int it = 0; it < 64; ++it) {
      const double a_f = std::floor(r);
      if (a_f > 9.2e18) break;
      const auto a = static_cast<std::int64_t>(a_f);
      const std::int64_t p2 = a * p1 + p0;
      const std::int64_t q2 = a * q1 + q0;
      if (q2 > max_den) break;
      p0 = p1;
      q0 = q1;
      p1 = p2;
      q1 = q2;
      const double frac = r - a_f;
      if (frac < 1e-15 * std::max(1.0, std::fabs(x))) break;
      r = 1.0 / frac;
    }
    if (q1 == 0) throw std::invalid_argument("Rational: cannot approximate value");
    return Rational(neg ? -p1 : p1, q1);
  }

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  double value() const { return static_cast<double>(num_) / static_cast<double>(den_); }
  bool positive() const { return num_ > 0; }

  friend bool operator==(const Rational& a, const Rational& b) {
    return a.num_ == b.num_ && a.den_ == b.den_;
  }
  friend bool operator!=(const Rational& a, const Rational& b) { return !(a == b); }

  Rational operator*(const Rational& o) const {
    const std::int64_t g1 = std::gcd(std::llabs(num_), o.den_);
    const std::int64_t g2 = std::gcd(std::llabs(o.num_), den_);
    return Rational((num_ / g1) * (o.num_ / g2), (den_ / g2) * (o.den_ / g1));
  }

  Rational reciprocal() const {
    if (num_ == 0) throw std::invalid_argument("Rational: reciprocal of zero");
    return Rational(den_, num_);
  }

  /// True iff this == (2k+1) * o for some integer k >= 0, i.e. this is an
  /// odd integer multiple of o.
  bool is_odd_multiple_of(const Rational& o) const {
    if (o.num_ == 0) return false;
    // this / o = (num*o.den) / (den*o.num) must be an odd positive integer.
    const Rational ratio = *this * o.reciprocal();
    return ratio.den() == 1 && ratio.num() > 0 && (ratio.num() % 2 == 1);
  }

  std::string str() const {
    if (den_ == 1) return std::to_string(num_);
    return std::to_string(num_) + "/" + std::to_string(den_);
  }

  /// lcm of two rationals a/b, c/d: lcm(a,c) / gcd(b,d).
  static Rational lcm(const Rational& x, const Rational& y) {
    if (x.num_ == 0 || y.num_ == 0) throw std::invalid_argument("Rational: lcm with zero");
    return Rational(std::lcm(std::llabs(x.num_), std::llabs(y.num_)), std::gcd(x.den_, y.den_));
  }

 private:
  void reduce() {
    if (num_ == 0) {
      den_ = 1;
      return;
    }
    const std::int64_t g = std::gcd(std::llabs(num_), den_);
    num_ /= g;
    den_ /= g;
  }

  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

}  // namespace pdzd
