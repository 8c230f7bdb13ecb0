#include "smoothhess/net.hpp"

#include "smoothhess/rng.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace smoothhess {

namespace {

double logistic(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// Samples are processed in tiles of this many rows. Each sample's arithmetic
// is independent of the tile it lands in.
constexpr Eigen::Index kTile = 256;

bool uses_beta(Activation a) { return a == Activation::softplus || a == Activation::swish; }

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::softplus:
      return "softplus";
    case Activation::swish:
      return "swish";
    case Activation::identity:
      return "identity";
  }
  return "identity";
}

Activation activation_from_string(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "softplus") return Activation::softplus;
  if (name == "swish") return Activation::swish;
  if (name == "identity") return Activation::identity;
  throw ParseError("unknown activation '" + std::string(name) + "'");
}

double activate(Activation a, double beta, double z) {
  switch (a) {
    case Activation::relu:
      return z > 0.0 ? z : 0.0;
    case Activation::softplus:
      return std::max(z, 0.0) + std::log1p(std::exp(-beta * std::abs(z))) / beta;
    case Activation::swish:
      return z * logistic(beta * z);
    case Activation::identity:
      return z;
  }
  return z;
}

double activate_d1(Activation a, double beta, double z) {
  switch (a) {
    case Activation::relu:
      return z > 0.0 ? 1.0 : 0.0;
    case Activation::softplus:
      return logistic(beta * z);
    case Activation::swish: {
      const double s = logistic(beta * z);
      return s + beta * z * s * (1.0 - s);
    }
    case Activation::identity:
      return 1.0;
  }
  return 1.0;
}

double activate_d2(Activation a, double beta, double z) {
  switch (a) {
    case Activation::relu:
    case Activation::identity:
      return 0.0;
    case Activation::softplus: {
      const double s = logistic(beta * z);
      return beta * s * (1.0 - s);
    }
    case Activation::swish: {
      const double s = logistic(beta * z);
      return beta * s * (1.0 - s) * (2.0 + beta * z * (1.0 - 2.0 * s));
    }
  }
  return 0.0;
}

Network::Network(std::size_t input_dim, std::vector<Layer> layers, Head head)
    : input_dim_(input_dim), layers_(std::move(layers)), head_(head) {
  if (input_dim_ == 0) throw InvalidArgument("network input_dim must be positive");
  if (layers_.empty()) throw InvalidArgument("network needs at least one layer");
  std::size_t width = input_dim_;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    if (layer.weight.rows() != layer.bias.size()) {
      std::ostringstream msg;
      msg << "layer " << l << ": weight has " << layer.weight.rows() << " rows but bias has "
          << layer.bias.size() << " entries";
      throw DimensionError(msg.str());
    }
    if (layer.in_dim() != width) {
      std::ostringstream msg;
      msg << "layer " << l << ": expects input width " << layer.in_dim() << " but receives "
          << width;
      throw DimensionError(msg.str());
    }
    if (uses_beta(layer.activation) && !(layer.beta > 0.0)) {
      std::ostringstream msg;
      msg << "layer " << l << ": beta must be positive for " << to_string(layer.activation);
      throw InvalidArgument(msg.str());
    }
    width = layer.out_dim();
  }
  switch (head_.kind) {
    case Head::Kind::output:
    case Head::Kind::softmax:
      if (head_.index >= layers_.back().out_dim())
        throw DimensionError("head index " + std::to_string(head_.index) +
                             " out of range for output width " +
                             std::to_string(layers_.back().out_dim()));
      break;
    case Head::Kind::internal:
      if (head_.layer >= layers_.size())
        throw DimensionError("head layer " + std::to_string(head_.layer) + " out of range");
      if (head_.index >= layers_[head_.layer].out_dim())
        throw DimensionError("head index " + std::to_string(head_.index) +
                             " out of range for layer " + std::to_string(head_.layer));
      break;
  }
}

Network Network::with_head(Head head) const { return Network(input_dim_, layers_, head); }

std::size_t Network::active_layer_count() const {
  return head_.kind == Head::Kind::internal ? head_.layer + 1 : layers_.size();
}

void Network::check_input(const Matrix& xs) const {
  if (static_cast<std::size_t>(xs.cols()) != input_dim_) {
    std::ostringstream msg;
    msg << "layer 0: input has " << xs.cols() << " features, network expects " << input_dim_;
    throw DimensionError(msg.str());
  }
}

namespace {

// Z(:, j) = b_j + sum_k W(j, k) * A(:, k), summed in ascending k.
void affine_tile(const Layer& layer, const Matrix& a, Matrix& z) {
  const Eigen::Index n = a.rows();
  z.resize(n, layer.weight.rows());
  for (Eigen::Index j = 0; j < layer.weight.rows(); ++j) {
    double* __restrict zc = z.col(j).data();
    const double b = layer.bias(j);
    for (Eigen::Index s = 0; s < n; ++s) zc[s] = b;
    for (Eigen::Index k = 0; k < layer.weight.cols(); ++k) {
      const double w = layer.weight(j, k);
      const double* __restrict ac = a.col(k).data();
      for (Eigen::Index s = 0; s < n; ++s) zc[s] += w * ac[s];
    }
  }
}

struct Trace {
  std::vector<Matrix> z;  // pre-activations per active layer
  std::vector<Matrix> a;  // post-activations (unused for a truncated head layer)
};

void softmax_rows(const Matrix& logits, Matrix& p) {
  p.resize(logits.rows(), logits.cols());
  for (Eigen::Index s = 0; s < logits.rows(); ++s) {
    double m = logits(s, 0);
    for (Eigen::Index c = 1; c < logits.cols(); ++c) m = std::max(m, logits(s, c));
    double total = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      p(s, c) = std::exp(logits(s, c) - m);
      total += p(s, c);
    }
    for (Eigen::Index c = 0; c < logits.cols(); ++c) p(s, c) /= total;
  }
}

}  // namespace

namespace detail {

// Shared kernel for forward and gradient evaluation over one tile.
struct Kernel {
  const std::vector<Layer>& layers;
  std::size_t active;
  Head head;

  void forward(const Matrix& x, Trace& t) const {
    t.z.resize(active);
    t.a.resize(active);
    const Matrix* in = &x;
    for (std::size_t l = 0; l < active; ++l) {
      affine_tile(layers[l], *in, t.z[l]);
      const bool truncated = head.kind == Head::Kind::internal && l + 1 == active;
      if (truncated) break;
      const Layer& layer = layers[l];
      Matrix& a = t.a[l];
      a.resize(t.z[l].rows(), t.z[l].cols());
      if (layer.activation == Activation::identity) {
        a = t.z[l];
      } else {
        for (Eigen::Index i = 0; i < a.size(); ++i)
          a.data()[i] = activate(layer.activation, layer.beta, t.z[l].data()[i]);
      }
      in = &a;
    }
  }

  void value(const Trace& t, Vector& out, Matrix* probs) const {
    const std::size_t last = active - 1;
    switch (head.kind) {
      case Head::Kind::output:
        out = t.a[last].col(static_cast<Eigen::Index>(head.index));
        break;
      case Head::Kind::internal:
        out = t.z[last].col(static_cast<Eigen::Index>(head.index));
        break;
      case Head::Kind::softmax: {
        Matrix p;
        softmax_rows(t.a[last], p);
        out = p.col(static_cast<Eigen::Index>(head.index));
        if (probs) *probs = std::move(p);
        break;
      }
    }
  }

  void gradient(const Matrix& x, const Trace& t, const Matrix* probs, Matrix& grad) const {
    const Eigen::Index n = x.rows();
    const std::size_t last = active - 1;
    const auto hi = static_cast<Eigen::Index>(head.index);

    Matrix dz(n, layers[last].weight.rows());
    dz.setZero();
    std::vector<char> live(static_cast<std::size_t>(dz.cols()), 0);
    const Layer& top = layers[last];
    switch (head.kind) {
      case Head::Kind::internal:
        dz.col(hi).setOnes();
        live[head.index] = 1;
        break;
      case Head::Kind::output:
        for (Eigen::Index s = 0; s < n; ++s)
          dz(s, hi) = activate_d1(top.activation, top.beta, t.z[last](s, hi));
        live[head.index] = 1;
        break;
      case Head::Kind::softmax: {
        const Matrix& p = *probs;
        for (Eigen::Index c = 0; c < dz.cols(); ++c) {
          for (Eigen::Index s = 0; s < n; ++s) {
            const double da = p(s, hi) * ((c == hi ? 1.0 : 0.0) - p(s, c));
            dz(s, c) = da * activate_d1(top.activation, top.beta, t.z[last](s, c));
          }
          live[static_cast<std::size_t>(c)] = 1;
        }
        break;
      }
    }

    Matrix da;
    for (std::size_t l = active; l-- > 0;) {
      const Layer& layer = layers[l];
      // da(:, k) = sum_j W(j, k) * dz(:, j), ascending j.
      da.resize(n, layer.weight.cols());
      da.setZero();
      for (Eigen::Index k = 0; k < layer.weight.cols(); ++k) {
        double* __restrict dc = da.col(k).data();
        for (Eigen::Index j = 0; j < layer.weight.rows(); ++j) {
          if (!live[static_cast<std::size_t>(j)]) continue;
          const double w = layer.weight(j, k);
          const double* __restrict zc = dz.col(j).data();
          for (Eigen::Index s = 0; s < n; ++s) dc[s] += w * zc[s];
        }
      }
      if (l == 0) break;
      const Layer& below = layers[l - 1];
      const Matrix& zb = t.z[l - 1];
      dz.resize(n, da.cols());
      for (Eigen::Index i = 0; i < da.size(); ++i)
        dz.data()[i] = da.data()[i] * activate_d1(below.activation, below.beta, zb.data()[i]);
      live.assign(static_cast<std::size_t>(dz.cols()), 1);
    }
    grad = std::move(da);
  }
};

}  // namespace detail

namespace {

template <typename Fn>
void for_each_tile(Eigen::Index n, Fn&& fn) {
  for (Eigen::Index start = 0; start < n; start += kTile) fn(start, std::min(kTile, n - start));
}

}  // namespace

void Network::batch_value_and_gradient(const Matrix& xs, Vector& values, Matrix& grads) const {
  check_input(xs);
  const detail::Kernel kernel{layers_, active_layer_count(), head_};
  values.resize(xs.rows());
  grads.resize(xs.rows(), xs.cols());
  Trace trace;
  Matrix tile, probs, g;
  Vector v;
  for_each_tile(xs.rows(), [&](Eigen::Index start, Eigen::Index len) {
    tile = xs.middleRows(start, len);
    kernel.forward(tile, trace);
    kernel.value(trace, v, &probs);
    kernel.gradient(tile, trace, &probs, g);
    values.segment(start, len) = v;
    grads.middleRows(start, len) = g;
  });
}

Vector Network::batch_forward(const Matrix& xs) const {
  check_input(xs);
  const detail::Kernel kernel{layers_, active_layer_count(), head_};
  Vector values(xs.rows());
  Trace trace;
  Matrix tile;
  Vector v;
  for_each_tile(xs.rows(), [&](Eigen::Index start, Eigen::Index len) {
    tile = xs.middleRows(start, len);
    kernel.forward(tile, trace);
    kernel.value(trace, v, nullptr);
    values.segment(start, len) = v;
  });
  return values;
}

Matrix Network::batch_gradient(const Matrix& xs) const {
  Vector values;
  Matrix grads;
  batch_value_and_gradient(xs, values, grads);
  return grads;
}

Matrix Network::batch_outputs(const Matrix& xs) const {
  check_input(xs);
  const detail::Kernel kernel{layers_, layers_.size(), Head::output_neuron(0)};
  Matrix out(xs.rows(), static_cast<Eigen::Index>(output_dim()));
  Trace trace;
  Matrix tile;
  for_each_tile(xs.rows(), [&](Eigen::Index start, Eigen::Index len) {
    tile = xs.middleRows(start, len);
    kernel.forward(tile, trace);
    out.middleRows(start, len) = trace.a.back();
  });
  return out;
}

std::size_t Network::predict_class(const Vector& x) const {
  const Matrix out = batch_outputs(x.transpose());
  Eigen::Index best = 0;
  out.row(0).maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

double Network::forward(const Vector& x) const { return batch_forward(x.transpose())(0); }

Vector Network::gradient(const Vector& x) const { return batch_gradient(x.transpose()).row(0).transpose(); }

Matrix Network::hessian_columns(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != input_dim_)
    throw DimensionError("layer 0: input has " + std::to_string(x.size()) +
                         " features, network expects " + std::to_string(input_dim_));
  const std::size_t active = active_layer_count();
  const bool truncated = head_.kind == Head::Kind::internal;
  for (std::size_t l = 0; l < active; ++l) {
    if (truncated && l + 1 == active) break;
    if (layers_[l].activation == Activation::relu)
      throw UnsupportedActivation("layer " + std::to_string(l) +
                                  " uses relu; the Hessian of a ReLU network is zero almost "
                                  "everywhere, use a smooth clone");
  }

  // Primal pass.
  std::vector<Vector> z(active), a(active);
  Vector in = x;
  for (std::size_t l = 0; l < active; ++l) {
    z[l] = layers_[l].weight * in + layers_[l].bias;
    if (truncated && l + 1 == active) break;
    a[l] = z[l].unaryExpr([&](double t) { return activate(layers_[l].activation, layers_[l].beta, t); });
    in = a[l];
  }
  auto d1 = [&](std::size_t l) {
    return z[l].unaryExpr([&](double t) { return activate_d1(layers_[l].activation, layers_[l].beta, t); }).eval();
  };
  auto d2 = [&](std::size_t l) {
    return z[l].unaryExpr([&](double t) { return activate_d2(layers_[l].activation, layers_[l].beta, t); }).eval();
  };
  std::vector<Vector> s1(active), s2(active);
  for (std::size_t l = 0; l < active; ++l) {
    s1[l] = d1(l);
    s2[l] = d2(l);
  }

  const std::size_t last = active - 1;
  const auto hi = static_cast<Eigen::Index>(head_.index);
  const Eigen::Index d = x.size();
  Matrix h(d, d);
  for (Eigen::Index col = 0; col < d; ++col) {
    // Tangent pass along e_col.
    std::vector<Vector> zt(active);
    Vector at = Vector::Unit(d, col);
    Vector top_at;
    for (std::size_t l = 0; l < active; ++l) {
      zt[l] = layers_[l].weight * at;
      if (truncated && l + 1 == active) break;
      at = s1[l].cwiseProduct(zt[l]);
      if (l == last) top_at = at;
    }

    // Adjoint of the head and its tangent, at the top layer's pre-activation.
    Vector zbar, zbar_t;
    const Eigen::Index width = static_cast<Eigen::Index>(layers_[last].out_dim());
    switch (head_.kind) {
      case Head::Kind::internal:
        zbar = Vector::Unit(width, hi);
        zbar_t = Vector::Zero(width);
        break;
      case Head::Kind::output: {
        Vector abar = Vector::Unit(width, hi);
        zbar = abar.cwiseProduct(s1[last]);
        zbar_t = abar.cwiseProduct(s2[last]).cwiseProduct(zt[last]);
        break;
      }
      case Head::Kind::softmax: {
        const Vector& logits = a[last];
        Vector p = (logits.array() - logits.maxCoeff()).exp();
        p /= p.sum();
        const Vector pt = p.cwiseProduct((top_at.array() - p.dot(top_at)).matrix());
        Vector abar(width), abar_t(width);
        for (Eigen::Index c = 0; c < width; ++c) {
          const double kron = c == hi ? 1.0 : 0.0;
          abar(c) = p(hi) * (kron - p(c));
          abar_t(c) = pt(hi) * (kron - p(c)) - p(hi) * pt(c);
        }
        zbar = abar.cwiseProduct(s1[last]);
        zbar_t = abar_t.cwiseProduct(s1[last]) + abar.cwiseProduct(s2[last]).cwiseProduct(zt[last]);
        break;
      }
    }

    for (std::size_t l = active; l-- > 0;) {
      Vector abar = layers_[l].weight.transpose() * zbar;
      Vector abar_t = layers_[l].weight.transpose() * zbar_t;
      if (l == 0) {
        h.col(col) = abar_t;
        break;
      }
      zbar = abar.cwiseProduct(s1[l - 1]);
      zbar_t = abar_t.cwiseProduct(s1[l - 1]) + abar.cwiseProduct(s2[l - 1]).cwiseProduct(zt[l - 1]);
    }
  }
  return h;
}

Matrix Network::hessian_smooth(const Vector& x) const {
  const Matrix h = hessian_columns(x);
  return (0.5 * (h + h.transpose())).eval();
}

namespace {

Network replace_relu(const Network& net, Activation with, double beta) {
  if (!(beta > 0.0)) throw InvalidArgument("beta must be positive");
  std::vector<Layer> layers = net.layers();
  for (Layer& layer : layers) {
    if (layer.activation == Activation::relu) {
      layer.activation = with;
      layer.beta = beta;
    }
  }
  return Network(net.input_dim(), std::move(layers), net.head());
}

}  // namespace

Network softplus_clone(const Network& net, double beta) { return replace_relu(net, Activation::softplus, beta); }

Network swish_clone(const Network& net, double beta) { return replace_relu(net, Activation::swish, beta); }

Network make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden_widths, std::size_t outputs,
                 std::uint64_t seed) {
  RandomStream rng(derive_seed(seed, 0x1A17), 0);
  std::vector<Layer> layers;
  std::size_t fan_in = input_dim;
  auto make = [&](std::size_t out, Activation act) {
    Layer layer;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    const double wbound = std::sqrt(6.0) * bound;  // He-uniform
    layer.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(fan_in));
    layer.bias.resize(static_cast<Eigen::Index>(out));
    for (Eigen::Index j = 0; j < layer.weight.rows(); ++j)
      for (Eigen::Index k = 0; k < layer.weight.cols(); ++k) layer.weight(j, k) = wbound * (2.0 * rng.uniform() - 1.0);
    for (Eigen::Index j = 0; j < layer.bias.size(); ++j) layer.bias(j) = bound * (2.0 * rng.uniform() - 1.0);
    layer.activation = act;
    layers.push_back(std::move(layer));
    fan_in = out;
  };
  for (std::size_t w : hidden_widths) make(w, Activation::relu);
  make(outputs, Activation::identity);
  return Network(input_dim, std::move(layers));
}

ScalarFunction as_function(const Network& net) {
  auto shared = std::make_shared<const Network>(net);
  return {net.input_dim(), [shared](const Matrix& xs) { return shared->batch_forward(xs); },
          [shared](const Matrix& xs) { return shared->batch_gradient(xs); }};
}

}  // namespace smoothhess
