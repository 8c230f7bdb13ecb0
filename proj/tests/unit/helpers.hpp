#pragma once

#include "smoothhess/net.hpp"
#include "smoothhess/rng.hpp"

namespace smoothhess::testing {

inline Vector randn(RandomStream& rng, Eigen::Index d, double scale = 1.0) {
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = scale * rng.normal();
  return v;
}

inline Matrix randm(RandomStream& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

inline Network random_net(RandomStream& rng, std::size_t d, const std::vector<std::size_t>& widths, Activation act,
                          double beta = 1.0) {
  std::vector<Layer> layers;
  std::size_t in = d;
  for (std::size_t w : widths) {
    const auto wi = static_cast<Eigen::Index>(w), ii = static_cast<Eigen::Index>(in);
    layers.push_back({randm(rng, wi, ii, 1.0 / std::sqrt(static_cast<double>(in))), randn(rng, wi, 0.3), act, beta});
    in = w;
  }
  layers.push_back({randm(rng, 1, static_cast<Eigen::Index>(in), 1.0 / std::sqrt(static_cast<double>(in))),
                    randn(rng, 1, 0.3), Activation::identity, 1.0});
  return Network(d, std::move(layers));
}

inline Network affine_net(const Vector& w, double b) {
  Layer l{w.transpose(), Vector::Constant(1, b), Activation::identity, 1.0};
  return Network(static_cast<std::size_t>(w.size()), {l});
}

inline Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

}  // namespace smoothhess::testing
