#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "bsdiff/stochastic.hpp"

namespace bsdiff {

struct SpectralEstimate {
  double sigma;  // estimate of the largest singular value (a lower bound)
  Vector u;      // left singular vector iterate, unit norm
  Vector v;      // right singular vector iterate, unit norm
};

/// Power iteration for sigma_max(W) starting from the left vector u.
/// A zero matrix yields sigma = 0 with u unchanged.
inline SpectralEstimate power_spectral_norm(const Matrix& weight, int iters, const Vector& u_start) {
  detail::require(u_start.size() == weight.rows(), "power iteration vector has the wrong size");
  detail::require(iters >= 1, "power iteration needs at least one iteration");
  SpectralEstimate est{0.0, u_start, Vector::Zero(weight.cols())};
  if (weight.isZero(0.0)) return est;
  Vector u = u_start;
  const double u_norm = u.norm();
  if (!(u_norm > 0.0)) {
    u = Vector::Zero(weight.rows());
    u(0) = 1.0;
  } else {
    u /= u_norm;
  }
  Vector v;
  double sigma = 0.0;
  for (int it = 0; it < iters; ++it) {
    v = weight.transpose() * u;
    double vn = v.norm();
    if (!(vn > 0.0)) {
      // u is orthogonal to the range of W; restart from the heaviest row.
      Index row = 0;
      weight.rowwise().norm().maxCoeff(&row);
      u.setZero();
      u(row) = 1.0;
      v = weight.transpose() * u;
      vn = v.norm();
    }
    v /= vn;
    Vector wv = weight * v;
    sigma = wv.norm();
    u = wv / sigma;
  }
  est.sigma = sigma;
  est.u = std::move(u);
  est.v = std::move(v);
  return est;
}

/// Power iteration run until the estimate stops moving (at least min_iters, at most max_iters).
inline double converged_spectral_norm(const Matrix& weight, const Vector& u_start, int min_iters = 20,
                                      int max_iters = 2000, double rel_tol = 1e-13) {
  SpectralEstimate est = power_spectral_norm(weight, min_iters, u_start);
  for (int it = min_iters; it < max_iters && est.sigma > 0.0; ++it) {
    SpectralEstimate next = power_spectral_norm(weight, 1, est.u);
    const bool done = std::abs(next.sigma - est.sigma) <= rel_tol * next.sigma;
    est = std::move(next);
    if (done) break;
  }
  return est.sigma;
}

/// Affine layer. With spectral normalization the forward map uses W / sigma,
/// sigma = u^T W v, where (u, v) is the persisted power-iteration state.
struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;
  Vector u;
  Vector v;
  double sigma = 1.0;

  Index in() const { return weight.cols(); }
  Index out() const { return weight.rows(); }
};

struct MlpGradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
};

/// tanh through the vectorized exponential: 1 - 2 / (exp(2z) + 1).
inline Matrix tanh_activation(const Matrix& z) {
  return (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
}

/// Feed-forward tanh network; hidden layers use tanh (|tanh'| <= 1), the last layer is linear.
class Mlp {
 public:
  struct Cache {
    std::vector<Matrix> inputs;  // input to each layer (post-activation of the previous one)
  };

  Mlp() = default;

  /// sizes = {in, hidden..., out}. Weights ~ N(0, 1/fan_in), the last layer scaled by final_scale.
  Mlp(const std::vector<Index>& sizes, bool spectral_norm, rng::Stream& init, double final_scale = 1.0)
      : spectral_norm_(spectral_norm) {
    detail::require(sizes.size() >= 2, "network needs at least an input and an output size");
    for (Index s : sizes) detail::require(s >= 1, "layer sizes must be positive");
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      DenseLayer layer;
      const Index in = sizes[l];
      const Index out = sizes[l + 1];
      const double scale = 1.0 / std::sqrt(static_cast<double>(in));
      layer.weight = init.normal_matrix(out, in) * scale;
      if (l + 2 == sizes.size()) layer.weight *= final_scale;
      layer.bias = Vector::Zero(out);
      layer.u = init.normal_matrix(out, 1).col(0);
      layer.u.normalize();
      layer.v = Vector::Zero(in);
      layers_.push_back(std::move(layer));
    }
    update_spectral_state(20);
  }

  explicit Mlp(std::vector<DenseLayer> layers, bool spectral_norm) : layers_(std::move(layers)), spectral_norm_(spectral_norm) {}

  std::size_t depth() const { return layers_.size(); }
  Index input_size() const { return layers_.front().in(); }
  Index output_size() const { return layers_.back().out(); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  bool spectral_norm() const { return spectral_norm_; }
  void set_spectral_norm(bool enabled) { spectral_norm_ = enabled; }

  std::vector<Index> sizes() const {
    std::vector<Index> s{input_size()};
    for (const auto& l : layers_) s.push_back(l.out());
    return s;
  }

  /// Factor applied to the raw weight in the forward map.
  double weight_scale(std::size_t l) const {
    const auto& layer = layers_[l];
    if (!spectral_norm_ || !(layer.sigma > 0.0)) return 1.0;
    return 1.0 / layer.sigma;
  }

  Matrix effective_weight(std::size_t l) const { return layers_[l].weight * weight_scale(l); }

  /// `iters` power iterations per layer from the persisted u; refreshes (u, v, sigma).
  void update_spectral_state(int iters) {
    for (auto& layer : layers_) {
      SpectralEstimate est = power_spectral_norm(layer.weight, iters, layer.u);
      if (est.sigma > 0.0) {
        layer.u = std::move(est.u);
        layer.v = std::move(est.v);
      }
      layer.sigma = est.sigma;
    }
  }

  Matrix forward(const Matrix& x) const {
    Matrix a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix z = (effective_weight(l) * a).colwise() + layers_[l].bias;
      a = (l + 1 < layers_.size()) ? tanh_activation(z) : std::move(z);
    }
    return a;
  }

  Matrix forward(const Matrix& x, Cache& cache) const {
    cache.inputs.resize(layers_.size());
    cache.inputs[0] = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix z = (effective_weight(l) * cache.inputs[l]).colwise() + layers_[l].bias;
      if (l + 1 == layers_.size()) return z;
      cache.inputs[l + 1] = tanh_activation(z);
    }
    return {};
  }

  /// Reverse-mode pass. Returns dL/dx; adds parameter gradients into `grads` when given.
  /// Under spectral normalization (u, v) are held fixed, so with W~ = W / sigma:
  ///   dL/dW = (G - <G, W~> u v^T) / sigma,  G = dL/dW~.
  Matrix backward(const Cache& cache, const Matrix& grad_out, MlpGradients* grads) const {
    if (grads && grads->weight.empty()) *grads = zero_gradients();
    Matrix delta = grad_out;
    for (std::size_t li = layers_.size(); li-- > 0;) {
      if (li + 1 < layers_.size()) {
        // tanh' = 1 - tanh^2, and the layer output is the next layer's input.
        delta = (delta.array() * (1.0 - cache.inputs[li + 1].array().square())).matrix();
      }
      if (grads) {
        const Matrix g_eff = delta * cache.inputs[li].transpose();
        grads->bias[li] += delta.rowwise().sum();
        const auto& layer = layers_[li];
        const double scale = weight_scale(li);
        if (spectral_norm_ && layer.sigma > 0.0) {
          const Matrix w_eff = layer.weight * scale;
          const double inner = (g_eff.array() * w_eff.array()).sum();
          grads->weight[li] += (g_eff - inner * layer.u * layer.v.transpose()) * scale;
        } else {
          grads->weight[li] += g_eff;
        }
      }
      delta = effective_weight(li).transpose() * delta;
    }
    return delta;
  }

  MlpGradients zero_gradients() const {
    MlpGradients g;
    for (const auto& layer : layers_) {
      g.weight.push_back(Matrix::Zero(layer.out(), layer.in()));
      g.bias.push_back(Vector::Zero(layer.out()));
    }
    return g;
  }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
    return n;
  }

  /// Parameters flattened layer by layer: weight (column-major) then bias.
  Vector parameters() const {
    Vector p(parameter_count());
    Index o = 0;
    for (const auto& layer : layers_) {
      p.segment(o, layer.weight.size()) = layer.weight.reshaped();
      o += layer.weight.size();
      p.segment(o, layer.bias.size()) = layer.bias;
      o += layer.bias.size();
    }
    return p;
  }

  void set_parameters(const Vector& p) {
    detail::require(p.size() == parameter_count(), "parameter vector has the wrong size");
    Index o = 0;
    for (auto& layer : layers_) {
      layer.weight.reshaped() = p.segment(o, layer.weight.size());
      o += layer.weight.size();
      layer.bias = p.segment(o, layer.bias.size());
      o += layer.bias.size();
    }
  }

  static Vector flatten(const MlpGradients& g) {
    Index n = 0;
    for (std::size_t l = 0; l < g.weight.size(); ++l) n += g.weight[l].size() + g.bias[l].size();
    Vector p(n);
    Index o = 0;
    for (std::size_t l = 0; l < g.weight.size(); ++l) {
      p.segment(o, g.weight[l].size()) = g.weight[l].reshaped();
      o += g.weight[l].size();
      p.segment(o, g.bias[l].size()) = g.bias[l];
      o += g.bias[l].size();
    }
    return p;
  }

 private:
  std::vector<DenseLayer> layers_;
  bool spectral_norm_ = false;
};

/// Adam over a flat parameter vector.
class Adam {
 public:
  explicit Adam(Index size, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(Vector::Zero(size)), v_(Vector::Zero(size)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Vector& params, const Vector& grad) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }

  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }

 private:
  Vector m_;
  Vector v_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::int64_t t_ = 0;
};

}  // namespace bsdiff
