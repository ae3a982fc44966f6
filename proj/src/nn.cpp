#include "zhoi/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace zhoi::nn {

Var& ParameterStore::add_parameter(const std::string& name, Matrix init) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
  index_[name] = entries_.size();
  entries_.push_back({name, ag::leaf(std::move(init), true), true});
  return entries_.back().var;
}

Var& ParameterStore::add_buffer(const std::string& name, Matrix init) {
  if (index_.count(name)) throw std::logic_error("duplicate buffer " + name);
  index_[name] = entries_.size();
  entries_.push_back({name, ag::leaf(std::move(init), false), false});
  return entries_.back().var;
}

Var& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter " + name);
  return entries_[it->second].var;
}

const Var& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter " + name);
  return entries_[it->second].var;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_)
    if (!e.var.grad().empty()) e.var.grad_ref().fill(0.0);
}

void ParameterStore::fill(const std::string& prefix, double value) {
  for (auto& e : entries_)
    if (e.trainable && e.name.rfind(prefix, 0) == 0) e.var.mutable_value().fill(value);
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.var.value().size();
  return n;
}

Matrix xavier_uniform(std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix m(in, out);
  for (double& x : m.storage()) x = rng.uniform(-limit, limit);
  return m;
}

Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (double& x : m.storage()) x = stddev * rng.normal();
  return m;
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
               bool bias)
    : in_(in), out_(out), has_bias_(bias) {
  w_ = store.add_parameter(name + ".weight", xavier_uniform(in, out, store.rng()));
  if (bias) b_ = store.add_parameter(name + ".bias", Matrix(1, out));
}

Var Linear::operator()(const Var& x) const {
  Var y = ag::matmul(x, w_);
  return has_bias_ ? ag::add_row(y, b_) : y;
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim) {
  gamma_ = store.add_parameter(name + ".gamma", Matrix(1, dim, 1.0));
  beta_ = store.add_parameter(name + ".beta", Matrix(1, dim));
}

Var LayerNorm::operator()(const Var& x) const { return ag::layer_norm(x, gamma_, beta_); }

MultiheadAttention::MultiheadAttention(ParameterStore& store, const std::string& name,
                                       std::size_t dim, std::size_t heads)
    : q_(store, name + ".q", dim, dim),
      k_(store, name + ".k", dim, dim),
      v_(store, name + ".v", dim, dim),
      o_(store, name + ".out", dim, dim),
      heads_(heads) {
  if (heads == 0 || dim % heads != 0)
    throw std::invalid_argument(name + ": dim " + std::to_string(dim) +
                                " not divisible by heads " + std::to_string(heads));
}

Var MultiheadAttention::operator()(const Var& query, const Var& key, const Var& value,
                                   std::size_t groups, Matrix* attn) const {
  return o_(ag::attention(q_(query), k_(key), v_(value), heads_, groups, attn));
}

FeedForward::FeedForward(ParameterStore& store, const std::string& name, std::size_t dim,
                         std::size_t hidden)
    : fc1_(store, name + ".fc1", dim, hidden), fc2_(store, name + ".fc2", hidden, dim) {}

Var FeedForward::operator()(const Var& x) const { return fc2_(ag::gelu(fc1_(x))); }

Mlp::Mlp(ParameterStore& store, const std::string& name, std::vector<std::size_t> dims) {
  if (dims.size() < 2) throw std::invalid_argument(name + ": MLP needs at least two dims");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i)
    layers_.emplace_back(store, name + ".layer" + std::to_string(i), dims[i], dims[i + 1]);
}

Var Mlp::operator()(const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i + 1 < layers_.size()) h = ag::gelu(h);
  }
  return h;
}

AdamW::AdamW(ParameterStore& store, AdamWOptions options) : store_(store), options_(options) {
  for (const auto& e : store_.entries()) {
    m_.emplace_back(e.var.rows(), e.var.cols());
    v_.emplace_back(e.var.rows(), e.var.cols());
  }
}

void AdamW::step() {
  ++t_;
  auto& entries = store_.entries();
  double sq = 0;
  for (const auto& e : entries)
    if (e.trainable && !e.var.grad().empty())
      for (double g : e.var.grad().storage()) sq += g * g;
  last_norm_ = std::sqrt(sq);
  const double clip = (options_.clip_grad_norm > 0 && last_norm_ > options_.clip_grad_norm)
                          ? options_.clip_grad_norm / last_norm_
                          : 1.0;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto& e = entries[p];
    if (!e.trainable || e.var.grad().empty()) continue;
    Matrix& w = e.var.mutable_value();
    const Matrix& g = e.var.grad();
    Matrix& m = m_[p];
    Matrix& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * gi;
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * gi * gi;
      w[i] -= options_.lr * options_.weight_decay * w[i];
      w[i] -= options_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + options_.eps);
    }
  }
}

}  // namespace zhoi::nn

namespace zhoi::nn {

Matrix sine_position_2d(std::size_t h, std::size_t w, std::size_t dim) {
  Matrix pe(h * w, dim);
  const std::size_t half = dim / 2;
  const std::size_t pairs = half / 2;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double coord[2] = {(y + 0.5) / static_cast<double>(h), (x + 0.5) / static_cast<double>(w)};
      for (std::size_t axis = 0; axis < 2; ++axis) {
        for (std::size_t i = 0; i < pairs; ++i) {
          const double freq = 2.0 * std::numbers::pi * std::pow(64.0, static_cast<double>(i) / std::max<std::size_t>(pairs, 1));
          pe(y * w + x, axis * half + 2 * i) = std::sin(coord[axis] * freq);
          pe(y * w + x, axis * half + 2 * i + 1) = std::cos(coord[axis] * freq);
        }
      }
    }
  }
  return pe;
}

}  // namespace zhoi::nn
