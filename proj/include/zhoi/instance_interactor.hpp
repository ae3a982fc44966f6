#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "zhoi/autograd.hpp"
#include "zhoi/nn.hpp"

namespace zhoi {

using ag::Var;

/// Stacks per-image blocks of two token sets: for every image b the rows of
/// `a` for b are followed by the rows of `b` for b.
Var interleave_rows(const Var& a, std::size_t a_per, const Var& b, std::size_t b_per, std::size_t batch);
Matrix interleave_rows(const Matrix& a, std::size_t a_per, const Matrix& b, std::size_t b_per,
                       std::size_t batch);
/// `times` vertical copies of m.
Matrix tile(const Matrix& m, std::size_t times);

/// Memory for cross-attention: tokens plus a fixed positional term added to keys.
struct DecoderMemory {
  Var tokens;         // (batch * per_image) x dim
  Matrix positions;   // same shape
  std::size_t per_image = 0;
};

/// Pre-norm decoder layer: self-attention, cross-attention, feed-forward,
/// each added back to the residual stream. `query_pos` is added to queries
/// and self-attention keys.
class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(nn::ParameterStore& store, const std::string& name, std::size_t dim, std::size_t heads,
               std::size_t ffn);
  Var operator()(const Var& x, const Var& query_pos, const DecoderMemory& memory, std::size_t batch,
                 Matrix* cross_attn = nullptr) const;

 private:
  nn::LayerNorm n_self_, n_cross_, n_mem_, n_ffn_;
  nn::MultiheadAttention self_, cross_;
  nn::FeedForward ffn_;
};

struct InstanceDecoderConfig {
  std::size_t dim = 256;
  std::size_t heads = 8;
  std::size_t ffn = 1024;
  std::size_t layers = 3;
  std::size_t queries = 64;
  std::size_t clip_dim = 512;
};

/// Human and object queries decoded jointly (2N per image) against the
/// memory [V_G ; Linear(V_sp)].
class InstanceDecoder {
 public:
  struct Output {
    Var q_h;  // (batch*N) x D
    Var q_o;
  };

  InstanceDecoder() = default;
  InstanceDecoder(nn::ParameterStore& store, const std::string& name, InstanceDecoderConfig cfg);

  Output operator()(const DecoderMemory& v_g, const DecoderMemory& v_sp, std::size_t batch) const;

  const Var& human_queries() const { return q_h_; }
  const Var& object_queries() const { return q_o_; }
  const Var& position_embedding() const { return p_; }
  const InstanceDecoderConfig& config() const { return cfg_; }

 private:
  InstanceDecoderConfig cfg_;
  Var q_h_, q_o_, p_;
  nn::Linear sp_proj_;
  std::vector<DecoderLayer> layers_;
};

struct InstanceOutputs {
  Var boxes_h;       // (batch*N) x 4, center form in (0, 1)
  Var boxes_o;
  Var object_logits; // (batch*N) x (C_obj + 1), last column = background
  Var human_logit;   // (batch*N) x 1
};

/// Box, object-category and human-confidence heads.
class InstanceHeads {
 public:
  InstanceHeads() = default;
  InstanceHeads(nn::ParameterStore& store, const std::string& name, std::size_t dim, std::size_t clip_dim,
                double logit_scale);
  /// object_weights: C_obj x clip_dim with unit rows.
  InstanceOutputs operator()(const Var& q_h, const Var& q_o, const Var& object_weights) const;

 private:
  nn::LayerNorm norm_h_, norm_o_;
  nn::Mlp box_h_, box_o_;
  nn::Linear obj_proj_, background_, human_;
  double logit_scale_ = 20.0;
};

/// Row-wise softmax of a logit matrix (plain values).
Matrix softmax(const Matrix& logits);
/// S_o: max foreground probability per row (last column is background).
std::vector<double> object_confidence(const Matrix& probs);

/// ((Q_h + P) + (Q_o + P)) / 2 with P tiled over the batch.
Var form_interaction_queries(const Var& q_h, const Var& q_o, const Var& p);

}  // namespace zhoi
