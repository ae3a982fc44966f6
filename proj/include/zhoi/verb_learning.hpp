#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "zhoi/instance_interactor.hpp"

namespace zhoi {

struct VerbDecoderConfig {
  std::size_t dim = 256;
  std::size_t heads = 8;
  std::size_t ffn = 1024;
  std::size_t layers = 1;
  std::size_t verbs = 117;
  bool query_self_attention = false;
};

/// One learnable query per verb. Each layer refines the memory with
/// self-attention, lets the verb queries cross-attend to it, then applies a
/// feed-forward block; all steps are pre-norm residual.
class VerbDecoder {
 public:
  VerbDecoder() = default;
  VerbDecoder(nn::ParameterStore& store, const std::string& name, VerbDecoderConfig cfg);

  /// Returns V_verb, (batch*A) x D. `cross_attn` (optional) receives one
  /// (batch*A) x L head-averaged map per layer.
  Var operator()(const DecoderMemory& v_g, std::size_t batch, std::vector<Matrix>* cross_attn = nullptr) const;

  const Var& queries() const { return q_v_; }
  const VerbDecoderConfig& config() const { return cfg_; }

 private:
  struct Layer {
    nn::LayerNorm n_mem_self, n_mem, n_query, n_qself, n_ffn;
    nn::MultiheadAttention mem_self, cross, query_self;
    nn::FeedForward ffn;
  };
  VerbDecoderConfig cfg_;
  Var q_v_;
  std::vector<Layer> layers_;
};

}  // namespace zhoi
