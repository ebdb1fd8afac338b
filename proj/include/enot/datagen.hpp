#pragma once

// Source/target samplers for the 2-D toy problems and random Gaussian
// benchmark pairs.

#include "enot/gaussian.hpp"
#include "enot/linalg.hpp"
#include "enot/rng.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>

namespace enot {

enum class ToyKind { gaussian, swiss_roll, eight_gaussians };

inline std::string to_string(ToyKind k) {
  switch (k) {
    case ToyKind::gaussian: return "gaussian";
    case ToyKind::swiss_roll: return "swiss_roll";
    case ToyKind::eight_gaussians: return "eight_gaussians";
  }
  return "?";
}

inline ToyKind toy_kind_from_string(const std::string& s) {
  if (s == "gaussian") return ToyKind::gaussian;
  if (s == "swiss_roll") return ToyKind::swiss_roll;
  if (s == "eight_gaussians") return ToyKind::eight_gaussians;
  throw std::invalid_argument("unknown toy distribution '" + s + "'");
}

// gaussian:        N(0, scale^2 I).
// eight_gaussians: centers radius * (cos(k pi/4), sin(k pi/4)), each N(c, sigma^2 I).
// swiss_roll:      u ~ U(0,1), s = 1.5 pi (1 + 2u), point (s cos s, s sin s) / 7.5,
//                  plus N(0, noise^2 I) truncated at 4 noise per coordinate.
struct ToyDistribution {
  ToyKind kind = ToyKind::gaussian;
  double scale = 1.0;
  double radius = 2.0;
  double sigma = 0.2;
  double noise = 0.05;
  std::size_t dim = 2;

  static constexpr double kSwissRollShrink = 7.5;
  static constexpr double kNoiseTruncation = 4.0;

  void validate() const {
    if (!(scale > 0.0 && radius > 0.0 && sigma > 0.0 && noise >= 0.0)) {
      throw std::invalid_argument("ToyDistribution: parameters must be positive");
    }
    if (kind != ToyKind::gaussian && dim != 2) throw std::invalid_argument("ToyDistribution: toys are 2-D");
    if (dim == 0) throw std::invalid_argument("ToyDistribution: dim must be >= 1");
  }

  // Every swiss_roll sample satisfies |x_i| <= swiss_roll_bound().
  double swiss_roll_bound() const { return 4.5 * std::numbers::pi / kSwissRollShrink + kNoiseTruncation * noise; }

  std::array<double, 2> center(int k) const {
    double a = k * std::numbers::pi / 4.0;
    return {radius * std::cos(a), radius * std::sin(a)};
  }
};

inline nlohmann::json to_json(const ToyDistribution& d) {
  return {{"kind", to_string(d.kind)}, {"scale", d.scale}, {"radius", d.radius},
          {"sigma", d.sigma},          {"noise", d.noise}, {"dim", d.dim}};
}

inline ToyDistribution toy_from_json(const nlohmann::json& j) {
  ToyDistribution d;
  d.kind = toy_kind_from_string(j.at("kind").get<std::string>());
  d.scale = j.value("scale", d.scale);
  d.radius = j.value("radius", d.radius);
  d.sigma = j.value("sigma", d.sigma);
  d.noise = j.value("noise", d.noise);
  d.dim = j.value("dim", d.dim);
  d.validate();
  return d;
}

inline RowMatrix sample(const ToyDistribution& dist, std::size_t n, Rng& rng) {
  dist.validate();
  if (n == 0) throw std::invalid_argument("sample: n must be >= 1");
  const auto rows = static_cast<Eigen::Index>(n);
  RowMatrix out(rows, static_cast<Eigen::Index>(dist.dim));
  switch (dist.kind) {
    case ToyKind::gaussian:
      for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = dist.scale * rng.normal();
      break;
    case ToyKind::eight_gaussians:
      for (Eigen::Index i = 0; i < rows; ++i) {
        auto c = dist.center(static_cast<int>(rng.next_u64() % 8));
        out(i, 0) = c[0] + dist.sigma * rng.normal();
        out(i, 1) = c[1] + dist.sigma * rng.normal();
      }
      break;
    case ToyKind::swiss_roll: {
      auto truncated = [&] {
        double z;
        do z = rng.normal();
        while (std::abs(z) > ToyDistribution::kNoiseTruncation);
        return z;
      };
      for (Eigen::Index i = 0; i < rows; ++i) {
        double s = 1.5 * std::numbers::pi * (1.0 + 2.0 * rng.uniform());
        out(i, 0) = s * std::cos(s) / ToyDistribution::kSwissRollShrink + dist.noise * truncated();
        out(i, 1) = s * std::sin(s) / ToyDistribution::kSwissRollShrink + dist.noise * truncated();
      }
      break;
    }
  }
  return out;
}

// Zero-mean pair with independent random_covariance draws from one seeded stream.
inline GaussianBenchmark make_gaussian_benchmark(std::size_t dim, std::uint64_t seed, double epsilon = 1.0) {
  if (dim == 0) throw std::invalid_argument("make_gaussian_benchmark: D must be >= 1");
  Rng rng(seed);
  const auto d = static_cast<Eigen::Index>(dim);
  GaussianBenchmark b;
  b.dim = dim;
  b.seed = seed;
  b.epsilon = epsilon;
  Matrix s0 = random_covariance(d, rng);
  Matrix s1 = random_covariance(d, rng);
  b.p0 = GaussianDist(Vector::Zero(d), s0);
  b.p1 = GaussianDist(Vector::Zero(d), s1);
  return b;
}

inline void write_samples_csv(std::ostream& os, const RowMatrix& xs, bool header = true) {
  if (header) {
    for (Eigen::Index d = 0; d < xs.cols(); ++d) os << (d ? "," : "") << "x_" << d;
    os << '\n';
  }
  auto old = os.precision(17);
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    for (Eigen::Index d = 0; d < xs.cols(); ++d) os << (d ? "," : "") << xs(i, d);
    os << '\n';
  }
  os.precision(old);
}

}  // namespace enot
