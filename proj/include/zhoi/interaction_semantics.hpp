#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "zhoi/instance_interactor.hpp"
#include "zhoi/label_space.hpp"
#include "zhoi/visual_frontend.hpp"

namespace zhoi {

struct InteractionDecoderConfig {
  std::size_t dim = 256;
  std::size_t heads = 8;
  std::size_t ffn = 1024;
  std::size_t layers = 3;
  std::size_t clip_dim = 512;
};

/// Per layer: Q <- Q + SA(Q); Q <- Q + CA_sp(Q, V_sp) + CA_g(Q, V_G);
/// Q <- Q + FFN(Q); pre-norm throughout.
class InteractionDecoder {
 public:
  struct Trace {
    std::vector<Matrix> spatial;  // per layer, (batch*N) x L_sp
    std::vector<Matrix> global;   // per layer, (batch*N) x L_g
  };

  InteractionDecoder() = default;
  InteractionDecoder(nn::ParameterStore& store, const std::string& name, InteractionDecoderConfig cfg);
  Var operator()(const Var& q_inter, const DecoderMemory& v_sp, const DecoderMemory& v_g, std::size_t batch,
                 Trace* trace = nullptr) const;

 private:
  struct Layer {
    nn::LayerNorm n_self, n_cross, n_sp, n_g, n_ffn;
    nn::MultiheadAttention self, cross_sp, cross_g;
    nn::FeedForward ffn;
  };
  InteractionDecoderConfig cfg_;
  nn::Linear sp_proj_;
  std::vector<Layer> layers_;
};

/// Text-derived classifier weights, unit rows.
struct ClassifierWeights {
  Matrix verbs;    // A x D_clip
  Matrix objects;  // C_obj x D_clip
};

/// W_o[o] = embed(object prompt); W_v[a] = normalize(mean over the HOIs of
/// verb a of embed(HOI prompt)). Throws if a verb has no HOI.
ClassifierWeights build_classifier_weights(const LabelSpace& space, const TextEmbedder& embedder);

struct VerbScoreOutputs {
  Var logits;      // (batch*N) x A
  Var q_proj;      // Proj(Q_inter''), (batch*N) x D_clip
  Var pair_term;   // (batch*N) x A
  Var image_term;  // batch x A
};

/// Knowledge-retrieval verb predictor:
///   D_verb = MLP_d(Proj(Q)), C_verb = MLP_c(Proj(V_verb))
///   logits[n, a] = s cos(D_verb[n], W_v[a]) + s cos(C_verb[a], W_v[a])
class VerbPredictor {
 public:
  VerbPredictor() = default;
  VerbPredictor(nn::ParameterStore& store, const std::string& name, std::size_t dim, std::size_t clip_dim,
                double logit_scale);
  /// q_inter: (batch*N) x D, v_verb: (batch*A) x D, verb_weights: A x D_clip.
  VerbScoreOutputs operator()(const Var& q_inter, const Var& v_verb, const Var& verb_weights,
                              std::size_t batch) const;

 private:
  nn::Linear proj_;
  nn::Mlp mlp_d_, mlp_c_;
  double logit_scale_ = 20.0;
};

/// The score fusion on its own: P = s cos(d, W_v), G = s diag-cos(c, W_v).
Var verb_score_fusion(const Var& d_verb, const Var& c_verb, const Var& verb_weights, std::size_t batch,
                      double logit_scale, Var* pair_term = nullptr, Var* image_term = nullptr);

}  // namespace zhoi
