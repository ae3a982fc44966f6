#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "zhoi/autograd.hpp"
#include "zhoi/rng.hpp"

namespace zhoi::nn {

using ag::Var;

/// Owns every trainable tensor and persistent buffer of a model under a
/// stable, hierarchical name. Registration order is the iteration order.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  Var& add_parameter(const std::string& name, Matrix init);
  /// Non-trainable persistent state (e.g. batch-norm running statistics).
  Var& add_buffer(const std::string& name, Matrix init);

  Var& get(const std::string& name);
  const Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  struct Entry {
    std::string name;
    Var var;
    bool trainable;
  };
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void zero_grad();
  /// Fills every parameter whose name starts with `prefix` with `value`.
  void fill(const std::string& prefix, double value);
  std::size_t parameter_count() const;

  Rng& rng() { return rng_; }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  Rng rng_;
};

Matrix xavier_uniform(std::size_t in, std::size_t out, Rng& rng);
Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

/// y = x W + b with W stored in x out.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
         bool bias = true);
  Var operator()(const Var& x) const;
  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }
  const Var& weight() const { return w_; }

 private:
  Var w_, b_;
  std::size_t in_ = 0, out_ = 0;
  bool has_bias_ = false;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim);
  Var operator()(const Var& x) const;

 private:
  Var gamma_, beta_;
};

/// Multi-head attention with separate q/k/v/out projections.
class MultiheadAttention {
 public:
  MultiheadAttention() = default;
  MultiheadAttention(ParameterStore& store, const std::string& name, std::size_t dim,
                     std::size_t heads);
  /// query: (groups*Lq) x d; key/value: (groups*Lk) x d.
  Var operator()(const Var& query, const Var& key, const Var& value, std::size_t groups = 1,
                 Matrix* attn = nullptr) const;
  std::size_t heads() const { return heads_; }

 private:
  Linear q_, k_, v_, o_;
  std::size_t heads_ = 1;
};

/// Linear -> GeLU -> Linear.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t hidden);
  Var operator()(const Var& x) const;

 private:
  Linear fc1_, fc2_;
};

/// Stack of Linear layers with GeLU between them (none after the last).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, std::vector<std::size_t> dims);
  Var operator()(const Var& x) const;

 private:
  std::vector<Linear> layers_;
};

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double clip_grad_norm = 0.0;  // 0 disables
};

/// Decoupled weight-decay Adam over every trainable entry of a store.
class AdamW {
 public:
  AdamW(ParameterStore& store, AdamWOptions options);
  void step();
  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }
  std::uint64_t steps() const { return t_; }
  /// Global gradient L2 norm measured by the last step (before clipping).
  double last_grad_norm() const { return last_norm_; }

 private:
  ParameterStore& store_;
  AdamWOptions options_;
  std::vector<Matrix> m_, v_;
  std::uint64_t t_ = 0;
  double last_norm_ = 0;
};

}  // namespace zhoi::nn

namespace zhoi::nn {

/// Fixed 2-D sine/cosine encoding for an h x w token grid, (h*w) x dim.
/// The first half of the channels encodes y, the second half x, each as
/// sin/cos pairs at geometric frequencies of the normalized cell centre.
Matrix sine_position_2d(std::size_t h, std::size_t w, std::size_t dim);

}  // namespace zhoi::nn
