#include "zhoi/interaction_semantics.hpp"

#include <cmath>

#include "zhoi/errors.hpp"

namespace zhoi {

InteractionDecoder::InteractionDecoder(nn::ParameterStore& store, const std::string& name,
                                       InteractionDecoderConfig cfg)
    : cfg_(cfg) {
  sp_proj_ = nn::Linear(store, name + ".sp_proj", cfg.clip_dim, cfg.dim);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = name + ".layer" + std::to_string(l);
    Layer layer;
    layer.n_self = nn::LayerNorm(store, p + ".norm_self", cfg.dim);
    layer.self = nn::MultiheadAttention(store, p + ".self", cfg.dim, cfg.heads);
    layer.n_cross = nn::LayerNorm(store, p + ".norm_cross", cfg.dim);
    layer.n_sp = nn::LayerNorm(store, p + ".norm_sp", cfg.dim);
    layer.cross_sp = nn::MultiheadAttention(store, p + ".cross_sp", cfg.dim, cfg.heads);
    layer.n_g = nn::LayerNorm(store, p + ".norm_g", cfg.dim);
    layer.cross_g = nn::MultiheadAttention(store, p + ".cross_g", cfg.dim, cfg.heads);
    layer.n_ffn = nn::LayerNorm(store, p + ".norm_ffn", cfg.dim);
    layer.ffn = nn::FeedForward(store, p + ".ffn", cfg.dim, cfg.ffn);
    layers_.push_back(std::move(layer));
  }
}

Var InteractionDecoder::operator()(const Var& q_inter, const DecoderMemory& v_sp, const DecoderMemory& v_g,
                                   std::size_t batch, Trace* trace) const {
  if (q_inter.cols() != cfg_.dim || v_g.tokens.cols() != cfg_.dim) {
    throw ValidationError("interaction decoder: query or V_G width != dim");
  }
  if (v_sp.tokens.cols() != cfg_.clip_dim) throw ValidationError("interaction decoder: V_sp width != clip dim");
  const Var sp_tokens = sp_proj_(v_sp.tokens);
  const Var sp_pos = ag::constant(v_sp.positions);
  const Var g_pos = ag::constant(v_g.positions);
  Var x = q_inter;
  for (const auto& layer : layers_) {
    Var h = layer.n_self(x);
    x = ag::add(x, layer.self(h, h, h, batch));

    Var q = layer.n_cross(x);
    Var sp = layer.n_sp(sp_tokens);
    Var g = layer.n_g(v_g.tokens);
    Matrix a_sp, a_g;
    Var from_sp = layer.cross_sp(q, ag::add(sp, sp_pos), sp, batch, trace ? &a_sp : nullptr);
    Var from_g = layer.cross_g(q, ag::add(g, g_pos), g, batch, trace ? &a_g : nullptr);
    if (trace) {
      trace->spatial.push_back(std::move(a_sp));
      trace->global.push_back(std::move(a_g));
    }
    x = ag::add(x, ag::add(from_sp, from_g));
    x = ag::add(x, layer.ffn(layer.n_ffn(x)));
  }
  return x;
}

namespace {

void normalize_row(std::span<double> r) {
  double n = 0;
  for (double v : r) n += v * v;
  n = std::sqrt(n);
  if (n == 0) throw ValidationError("classifier weight row has zero norm");
  for (double& v : r) v /= n;
}

}  // namespace

ClassifierWeights build_classifier_weights(const LabelSpace& space, const TextEmbedder& embedder) {
  const std::size_t d = embedder.dim();
  ClassifierWeights w{Matrix(space.num_verbs(), d), Matrix(space.num_objects(), d)};
  for (std::size_t o = 0; o < space.num_objects(); ++o) {
    const auto e = embedder.embed(object_prompt(space.objects()[o]));
    std::copy(e.begin(), e.end(), w.objects.row(o).begin());
    normalize_row(w.objects.row(o));
  }
  for (std::size_t v = 0; v < space.num_verbs(); ++v) {
    const auto& hois = space.hois_of_verb(v);
    if (hois.empty()) throw ValidationError("verb '" + space.verbs()[v] + "' has no HOI to build its weight from");
    auto row = w.verbs.row(v);
    for (auto h : hois) {
      const auto e = embedder.embed(hoi_prompt(space.verbs()[v], space.objects()[space.hoi(h).second]));
      for (std::size_t k = 0; k < d; ++k) row[k] += e[k];
    }
    for (double& x : row) x /= static_cast<double>(hois.size());
    normalize_row(row);
  }
  return w;
}

VerbPredictor::VerbPredictor(nn::ParameterStore& store, const std::string& name, std::size_t dim,
                             std::size_t clip_dim, double logit_scale)
    : logit_scale_(logit_scale) {
  proj_ = nn::Linear(store, name + ".proj", dim, clip_dim);
  mlp_d_ = nn::Mlp(store, name + ".mlp_d", {clip_dim, clip_dim, clip_dim});
  mlp_c_ = nn::Mlp(store, name + ".mlp_c", {clip_dim, clip_dim, clip_dim});
}

Var verb_score_fusion(const Var& d_verb, const Var& c_verb, const Var& verb_weights, std::size_t batch,
                      double logit_scale, Var* pair_term, Var* image_term) {
  const std::size_t verbs = verb_weights.rows();
  if (c_verb.rows() != batch * verbs || d_verb.rows() % batch != 0) {
    throw ValidationError("verb scores: row counts inconsistent with batch");
  }
  const std::size_t n = d_verb.rows() / batch;
  Var p = ag::scale(ag::matmul_nt(ag::normalize_rows(d_verb), verb_weights), logit_scale);
  Var w_tiled = ag::tile_rows(verb_weights, batch);
  Var g = ag::scale(ag::row_sums(ag::mul(ag::normalize_rows(c_verb), w_tiled)), logit_scale);  // (batch*A) x 1
  g = ag::reshape(g, batch, verbs);
  if (pair_term) *pair_term = p;
  if (image_term) *image_term = g;
  return ag::add(p, ag::repeat_rows(g, n));
}

VerbScoreOutputs VerbPredictor::operator()(const Var& q_inter, const Var& v_verb, const Var& verb_weights,
                                           std::size_t batch) const {
  VerbScoreOutputs out;
  out.q_proj = proj_(q_inter);
  Var d_verb = mlp_d_(out.q_proj);
  Var c_verb = mlp_c_(proj_(v_verb));
  out.logits = verb_score_fusion(d_verb, c_verb, verb_weights, batch, logit_scale_, &out.pair_term, &out.image_term);
  return out;
}

}  // namespace zhoi
