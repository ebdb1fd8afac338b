#pragma once

#include "enot/autodiff.hpp"
#include "enot/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace enot {

enum class Activation { relu, leaky_relu };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "leaky_relu"; }
inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "leaky_relu") return Activation::leaky_relu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

template <class T>
struct LinearLayer {
  ad::BasicTensor<T> weight;  // [out, in]
  ad::BasicTensor<T> bias;    // [out]

  std::size_t in() const { return weight.dim(1); }
  std::size_t out() const { return weight.dim(0); }
};

// Feed-forward network: linear layers with an activation after every layer but the last.
template <class T>
class Mlp {
 public:
  Mlp() = default;

  // `dims` = {in, hidden..., out}. Hidden layers get He-uniform weights and zero
  // biases; the last layer is LeCun-uniform, or all zeros if `zero_last`.
  Mlp(const std::vector<std::size_t>& dims, Activation act, Rng& rng, bool zero_last = false) : act_(act) {
    if (dims.size() < 2) throw std::invalid_argument("Mlp: need at least input and output dims");
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      std::size_t in = dims[l], out = dims[l + 1];
      if (in == 0 || out == 0) throw std::invalid_argument("Mlp: zero-width layer");
      bool last = l + 2 == dims.size();
      double bound = last ? std::sqrt(3.0 / static_cast<double>(in)) : std::sqrt(6.0 / static_cast<double>(in));
      std::vector<T> w(out * in, T(0));
      if (!(last && zero_last)) {
        for (auto& x : w) x = static_cast<T>(rng.uniform(-bound, bound));
      }
      layers_.push_back({ad::BasicTensor<T>({out, in}, std::move(w), true), ad::BasicTensor<T>::zeros({out}, true)});
    }
  }

  explicit Mlp(std::vector<LinearLayer<T>> layers, Activation act = Activation::relu)
      : layers_(std::move(layers)), act_(act) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].bias.rank() != 1 || layers_[l].bias.dim(0) != layers_[l].out()) {
        throw std::invalid_argument("Mlp: bias of layer " + std::to_string(l) + " does not match its weight");
      }
      if (l > 0 && layers_[l].in() != layers_[l - 1].out()) {
        throw std::invalid_argument("Mlp: layer " + std::to_string(l) + " input does not chain");
      }
    }
  }

  ad::BasicTensor<T> forward(const ad::BasicTensor<T>& x) const {
    ad::BasicTensor<T> h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = ad::linear(h, layers_[l].weight, layers_[l].bias);
      if (l + 1 < layers_.size()) h = act_ == Activation::relu ? ad::relu(h) : ad::leaky_relu(h);
    }
    return h;
  }

  std::size_t in_dim() const { return layers_.front().in(); }
  std::size_t out_dim() const { return layers_.back().out(); }
  Activation activation() const { return act_; }
  const std::vector<LinearLayer<T>>& layers() const { return layers_; }

  std::vector<ad::BasicTensor<T>> parameters() const {
    std::vector<ad::BasicTensor<T>> p;
    for (const auto& l : layers_) {
      p.push_back(l.weight);
      p.push_back(l.bias);
    }
    return p;
  }

  void zero_grad() {
    for (auto& l : layers_) {
      l.weight.zero_grad();
      l.bias.zero_grad();
    }
  }

  // Deep copy: fresh leaves with the same values.
  Mlp clone() const {
    std::vector<LinearLayer<T>> ls;
    for (const auto& l : layers_) {
      ls.push_back({ad::BasicTensor<T>(l.weight.shape(), ad::Buffer<T>(l.weight.data().begin(), l.weight.data().end()), true),
                    ad::BasicTensor<T>(l.bias.shape(), ad::Buffer<T>(l.bias.data().begin(), l.bias.data().end()), true)});
    }
    return Mlp(std::move(ls), act_);
  }

 private:
  std::vector<LinearLayer<T>> layers_;
  Activation act_ = Activation::relu;
};

enum class DriftParam { drift, residual };

inline std::string to_string(DriftParam p) { return p == DriftParam::drift ? "drift" : "residual"; }
inline DriftParam drift_param_from_string(const std::string& s) {
  if (s == "drift") return DriftParam::drift;
  if (s == "residual") return DriftParam::residual;
  throw std::invalid_argument("unknown parametrization '" + s + "'");
}

// Appends the raw time value as an extra input column.
template <class T>
ad::BasicTensor<T> with_time_column(const ad::BasicTensor<T>& x, double t) {
  return ad::concat<T>({x, ad::BasicTensor<T>::full({x.dim(0), 1}, static_cast<T>(t))});
}

// f(x, t) : R^D x [0,1] -> R^D. In residual mode the network outputs the next
// state g(x,t) and the drift is (g - x)/dt.
template <class T>
class BasicDriftModel {
 public:
  BasicDriftModel() = default;
  BasicDriftModel(Mlp<T> mlp, DriftParam mode = DriftParam::drift) : mlp_(std::move(mlp)), mode_(mode) {
    if (mlp_.in_dim() != mlp_.out_dim() + 1) {
      throw std::invalid_argument("DriftModel: network must map D+1 inputs to D outputs");
    }
  }

  // Hidden layer widths `hidden`; final layer zero-initialized so training starts from f = 0.
  static BasicDriftModel make(std::size_t dim, const std::vector<std::size_t>& hidden, Rng& rng,
                              DriftParam mode = DriftParam::drift, Activation act = Activation::relu) {
    std::vector<std::size_t> dims{dim + 1};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(dim);
    return BasicDriftModel(Mlp<T>(dims, act, rng, true), mode);
  }

  std::size_t dim() const { return mlp_.out_dim(); }
  DriftParam mode() const { return mode_; }
  const Mlp<T>& mlp() const { return mlp_; }
  Mlp<T>& mlp() { return mlp_; }
  std::vector<ad::BasicTensor<T>> parameters() const { return mlp_.parameters(); }
  void zero_grad() { mlp_.zero_grad(); }
  BasicDriftModel clone() const { return BasicDriftModel(mlp_.clone(), mode_); }

  // `dt` is only used in residual mode.
  ad::BasicTensor<T> operator()(const ad::BasicTensor<T>& x, double t, double dt = 0.0) const {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("drift_eval: t=" + std::to_string(t) + " outside [0,1]");
    if (x.rank() != 2 || x.dim(1) != dim()) {
      throw ad::ShapeError("drift_eval: expected [B," + std::to_string(dim()) + "] input, got " + ad::shape_str(x.shape()));
    }
    auto out = mlp_.forward(with_time_column(x, t));
    if (mode_ == DriftParam::drift) return out;
    if (!(dt > 0.0)) throw std::invalid_argument("drift_eval: residual mode needs dt > 0");
    return ad::scale(ad::sub(out, x), static_cast<T>(1.0 / dt));
  }

 private:
  Mlp<T> mlp_;
  DriftParam mode_ = DriftParam::drift;
};

// beta(y) : R^D -> R, evaluated row-wise to shape [B].
template <class T>
class BasicPotentialModel {
 public:
  BasicPotentialModel() = default;
  explicit BasicPotentialModel(Mlp<T> mlp) : mlp_(std::move(mlp)) {
    if (mlp_.out_dim() != 1) throw std::invalid_argument("PotentialModel: network must have one output");
  }

  static BasicPotentialModel make(std::size_t dim, const std::vector<std::size_t>& hidden, Rng& rng,
                                  Activation act = Activation::relu) {
    std::vector<std::size_t> dims{dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(1);
    return BasicPotentialModel(Mlp<T>(dims, act, rng, false));
  }

  std::size_t dim() const { return mlp_.in_dim(); }
  const Mlp<T>& mlp() const { return mlp_; }
  Mlp<T>& mlp() { return mlp_; }
  std::vector<ad::BasicTensor<T>> parameters() const { return mlp_.parameters(); }
  void zero_grad() { mlp_.zero_grad(); }
  BasicPotentialModel clone() const { return BasicPotentialModel(mlp_.clone()); }

  ad::BasicTensor<T> operator()(const ad::BasicTensor<T>& y) const {
    if (y.rank() != 2 || y.dim(1) != dim()) {
      throw ad::ShapeError("potential_eval: expected [B," + std::to_string(dim()) + "] input, got " +
                           ad::shape_str(y.shape()));
    }
    auto out = mlp_.forward(y);
    return ad::reshape(out, {y.dim(0)});
  }

 private:
  Mlp<T> mlp_;
};

using DriftModel = BasicDriftModel<double>;
using PotentialModel = BasicPotentialModel<double>;

// Adam with bias correction. Moment buffers are laid out like the parameter list
// handed to the constructor.
template <class T>
class Adam {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(const std::vector<ad::BasicTensor<T>>& params, Options opt) : opt_(opt) {
    for (const auto& p : params) {
      shapes_.push_back(p.shape());
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  // params[k] -= lr * mhat / (sqrt(vhat) + eps) with grads given explicitly.
  void step(std::vector<ad::BasicTensor<T>>& params, const std::vector<std::vector<T>>& grads) {
    if (params.size() != shapes_.size() || grads.size() != shapes_.size()) {
      throw ad::ShapeError("adam_step: expected " + std::to_string(shapes_.size()) + " parameters");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (params[k].shape() != shapes_[k] || grads[k].size() != params[k].numel()) {
        throw ad::ShapeError("adam_step: parameter " + std::to_string(k) + " has shape " +
                             ad::shape_str(params[k].shape()) + ", state has " + ad::shape_str(shapes_[k]));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto p = params[k].mutable_data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        double g = static_cast<double>(grads[k][i]);
        m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
        v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
        double mhat = m[i] / c1;
        double vhat = v[i] / c2;
        p[i] = static_cast<T>(static_cast<double>(p[i]) - opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps));
      }
    }
  }

  // Uses the gradients accumulated on the leaves; missing gradients count as zero.
  void step(std::vector<ad::BasicTensor<T>>& params) {
    std::vector<std::vector<T>> grads;
    for (const auto& p : params) {
      grads.push_back(p.has_grad() ? std::vector<T>(p.grad().begin(), p.grad().end()) : std::vector<T>(p.numel(), T(0)));
    }
    step(params, grads);
  }

  void set_lr(double lr) { opt_.lr = lr; }
  const Options& options() const { return opt_; }
  std::uint64_t step_count() const { return t_; }

 private:
  Options opt_;
  std::vector<ad::Shape> shapes_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

// Global L2 norm of accumulated gradients; rescales them in place if above `max_norm`.
template <class T>
double clip_grad_norm(std::vector<ad::BasicTensor<T>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    if (p.has_grad())
      for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      auto& g = p.node()->grad;
      for (auto& x : g) x = static_cast<T>(static_cast<double>(x) * s);
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON with per-layer shapes and row-major values. nlohmann/json
// prints doubles in shortest round-trip form, so reload is bit-exact.

inline constexpr int kCheckpointVersion = 1;

template <class T>
nlohmann::json mlp_to_json(const Mlp<T>& mlp) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : mlp.layers()) {
    layers.push_back({{"out", l.out()},
                      {"in", l.in()},
                      {"weight", std::vector<T>(l.weight.data().begin(), l.weight.data().end())},
                      {"bias", std::vector<T>(l.bias.data().begin(), l.bias.data().end())}});
  }
  return {{"activation", to_string(mlp.activation())}, {"layers", layers}};
}

template <class T>
Mlp<T> mlp_from_json(const nlohmann::json& j) {
  std::vector<LinearLayer<T>> layers;
  for (const auto& l : j.at("layers")) {
    std::size_t out = l.at("out"), in = l.at("in");
    auto w = l.at("weight").get<std::vector<T>>();
    auto b = l.at("bias").get<std::vector<T>>();
    layers.push_back({ad::BasicTensor<T>({out, in}, std::move(w), true), ad::BasicTensor<T>({out}, std::move(b), true)});
  }
  return Mlp<T>(std::move(layers), activation_from_string(j.at("activation")));
}

template <class T>
nlohmann::json checkpoint_to_json(const BasicDriftModel<T>& drift, const BasicPotentialModel<T>& potential,
                                  const nlohmann::json& config_echo = nlohmann::json::object()) {
  return {{"format", "enot-checkpoint"},
          {"version", kCheckpointVersion},
          {"scalar", sizeof(T) == 8 ? "f64" : "f32"},
          {"dim", drift.dim()},
          {"drift", {{"parametrization", to_string(drift.mode())}, {"mlp", mlp_to_json(drift.mlp())}}},
          {"potential", {{"mlp", mlp_to_json(potential.mlp())}}},
          {"config", config_echo}};
}

template <class T>
std::pair<BasicDriftModel<T>, BasicPotentialModel<T>> checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "enot-checkpoint") throw std::runtime_error("checkpoint: not an enot checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(j.value("version", 0)));
  }
  BasicDriftModel<T> drift(mlp_from_json<T>(j.at("drift").at("mlp")),
                           drift_param_from_string(j.at("drift").at("parametrization")));
  BasicPotentialModel<T> potential(mlp_from_json<T>(j.at("potential").at("mlp")));
  if (drift.dim() != potential.dim()) throw std::runtime_error("checkpoint: drift and potential dims differ");
  return {std::move(drift), std::move(potential)};
}

// FNV-1a over the serialized text; identifies a checkpoint in exported metadata.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace enot
