#pragma once

// Central finite differences against analytic gradients.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace fd {

struct Result {
  double worst = 0.0;
  int checked = 0;
};

inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Checks `samples` random components (all of them if fewer exist).
inline Result check(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& grad, int samples, std::uint64_t seed, double h = 1e-5) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  if (static_cast<int>(idx.size()) > samples) idx.resize(static_cast<std::size_t>(samples));
  Result r;
  for (Eigen::Index k : idx) {
    Eigen::VectorXd p = x;
    p(k) += h;
    const double up = f(p);
    p(k) = x(k) - h;
    const double down = f(p);
    r.worst = std::max(r.worst, rel_error(grad(k), (up - down) / (2.0 * h)));
    ++r.checked;
  }
  return r;
}

}  // namespace fd
