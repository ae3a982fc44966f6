#include "zhoi/verb_learning.hpp"

#include "zhoi/errors.hpp"

namespace zhoi {

VerbDecoder::VerbDecoder(nn::ParameterStore& store, const std::string& name, VerbDecoderConfig cfg) : cfg_(cfg) {
  if (cfg.layers == 0) throw ValidationError("verb decoder needs at least one layer");
  q_v_ = store.add_parameter(name + ".queries", nn::normal_matrix(cfg.verbs, cfg.dim, 1.0, store.rng()));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = name + ".layer" + std::to_string(l);
    Layer layer;
    layer.n_mem_self = nn::LayerNorm(store, p + ".norm_mem_self", cfg.dim);
    layer.mem_self = nn::MultiheadAttention(store, p + ".mem_self", cfg.dim, cfg.heads);
    layer.n_mem = nn::LayerNorm(store, p + ".norm_mem", cfg.dim);
    layer.n_query = nn::LayerNorm(store, p + ".norm_query", cfg.dim);
    layer.cross = nn::MultiheadAttention(store, p + ".cross", cfg.dim, cfg.heads);
    if (cfg.query_self_attention) {
      layer.n_qself = nn::LayerNorm(store, p + ".norm_qself", cfg.dim);
      layer.query_self = nn::MultiheadAttention(store, p + ".query_self", cfg.dim, cfg.heads);
    }
    layer.n_ffn = nn::LayerNorm(store, p + ".norm_ffn", cfg.dim);
    layer.ffn = nn::FeedForward(store, p + ".ffn", cfg.dim, cfg.ffn);
    layers_.push_back(std::move(layer));
  }
}

Var VerbDecoder::operator()(const DecoderMemory& v_g, std::size_t batch, std::vector<Matrix>* cross_attn) const {
  if (v_g.tokens.cols() != cfg_.dim) throw ValidationError("verb decoder: memory width != dim");
  const Var pos = ag::constant(v_g.positions);
  Var mem = v_g.tokens;
  Var x = ag::tile_rows(q_v_, batch);
  for (const auto& layer : layers_) {
    Var m = layer.n_mem_self(mem);
    Var mk = ag::add(m, pos);
    mem = ag::add(mem, layer.mem_self(mk, mk, m, batch));

    Var mn = layer.n_mem(mem);
    Matrix probs;
    x = ag::add(x, layer.cross(layer.n_query(x), ag::add(mn, pos), mn, batch, cross_attn ? &probs : nullptr));
    if (cross_attn) cross_attn->push_back(std::move(probs));
    if (cfg_.query_self_attention) {
      Var q = layer.n_qself(x);
      x = ag::add(x, layer.query_self(q, q, q, batch));
    }
    x = ag::add(x, layer.ffn(layer.n_ffn(x)));
  }
  return x;
}

}  // namespace zhoi
