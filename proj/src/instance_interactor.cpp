#include "zhoi/instance_interactor.hpp"

#include <algorithm>
#include <cmath>

#include "zhoi/errors.hpp"

namespace zhoi {

namespace {

std::vector<std::size_t> interleave_index(std::size_t a_rows, std::size_t a_per, std::size_t b_per,
                                          std::size_t batch) {
  std::vector<std::size_t> idx;
  idx.reserve(batch * (a_per + b_per));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < a_per; ++i) idx.push_back(b * a_per + i);
    for (std::size_t i = 0; i < b_per; ++i) idx.push_back(a_rows + b * b_per + i);
  }
  return idx;
}

}  // namespace

Var interleave_rows(const Var& a, std::size_t a_per, const Var& b, std::size_t b_per, std::size_t batch) {
  if (a.rows() != a_per * batch || b.rows() != b_per * batch) throw ValidationError("interleave_rows: row counts");
  const auto idx = interleave_index(a.rows(), a_per, b_per, batch);
  std::vector<Var> parts{a, b};
  return ag::gather_rows(ag::concat_rows(parts), idx);
}

Matrix interleave_rows(const Matrix& a, std::size_t a_per, const Matrix& b, std::size_t b_per, std::size_t batch) {
  if (a.rows() != a_per * batch || b.rows() != b_per * batch || a.cols() != b.cols()) {
    throw ValidationError("interleave_rows: shapes");
  }
  const auto idx = interleave_index(a.rows(), a_per, b_per, batch);
  Matrix out(idx.size(), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto src = idx[r] < a.rows() ? a.row(idx[r]) : b.row(idx[r] - a.rows());
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

Matrix tile(const Matrix& m, std::size_t times) {
  Matrix out(m.rows() * times, m.cols());
  for (std::size_t t = 0; t < times; ++t) std::copy(m.storage().begin(), m.storage().end(), out.data() + t * m.size());
  return out;
}

DecoderLayer::DecoderLayer(nn::ParameterStore& store, const std::string& name, std::size_t dim, std::size_t heads,
                           std::size_t ffn) {
  n_self_ = nn::LayerNorm(store, name + ".norm_self", dim);
  self_ = nn::MultiheadAttention(store, name + ".self", dim, heads);
  n_cross_ = nn::LayerNorm(store, name + ".norm_cross", dim);
  n_mem_ = nn::LayerNorm(store, name + ".norm_mem", dim);
  cross_ = nn::MultiheadAttention(store, name + ".cross", dim, heads);
  n_ffn_ = nn::LayerNorm(store, name + ".norm_ffn", dim);
  ffn_ = nn::FeedForward(store, name + ".ffn", dim, ffn);
}

Var DecoderLayer::operator()(const Var& x, const Var& query_pos, const DecoderMemory& memory, std::size_t batch,
                             Matrix* cross_attn) const {
  Var h = n_self_(x);
  Var qk = ag::add(h, query_pos);
  Var y = ag::add(x, self_(qk, qk, h, batch));

  Var mem = n_mem_(memory.tokens);
  Var keys = ag::add(mem, ag::constant(memory.positions));
  y = ag::add(y, cross_(ag::add(n_cross_(y), query_pos), keys, mem, batch, cross_attn));
  return ag::add(y, ffn_(n_ffn_(y)));
}

InstanceDecoder::InstanceDecoder(nn::ParameterStore& store, const std::string& name, InstanceDecoderConfig cfg)
    : cfg_(cfg) {
  q_h_ = store.add_parameter(name + ".query_h", nn::normal_matrix(cfg.queries, cfg.dim, 1.0, store.rng()));
  q_o_ = store.add_parameter(name + ".query_o", nn::normal_matrix(cfg.queries, cfg.dim, 1.0, store.rng()));
  p_ = store.add_parameter(name + ".position", nn::normal_matrix(cfg.queries, cfg.dim, 1.0, store.rng()));
  sp_proj_ = nn::Linear(store, name + ".sp_proj", cfg.clip_dim, cfg.dim);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    layers_.emplace_back(store, name + ".layer" + std::to_string(l), cfg.dim, cfg.heads, cfg.ffn);
  }
}

InstanceDecoder::Output InstanceDecoder::operator()(const DecoderMemory& v_g, const DecoderMemory& v_sp,
                                                    std::size_t batch) const {
  const std::size_t n = cfg_.queries;
  if (v_g.tokens.cols() != cfg_.dim) throw ValidationError("instance decoder: V_G width != dim");
  if (v_sp.tokens.cols() != cfg_.clip_dim) throw ValidationError("instance decoder: V_sp width != clip dim");

  DecoderMemory mem;
  mem.per_image = v_g.per_image + v_sp.per_image;
  mem.tokens = interleave_rows(v_g.tokens, v_g.per_image, sp_proj_(v_sp.tokens), v_sp.per_image, batch);
  mem.positions = interleave_rows(v_g.positions, v_g.per_image, v_sp.positions, v_sp.per_image, batch);

  std::vector<Var> qs{q_h_, q_o_};
  Var x = ag::tile_rows(ag::concat_rows(qs), batch);
  std::vector<Var> ps{p_, p_};
  Var pos = ag::tile_rows(ag::concat_rows(ps), batch);
  for (const auto& layer : layers_) x = layer(x, pos, mem, batch);

  std::vector<std::size_t> hi, oi;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      hi.push_back(b * 2 * n + i);
      oi.push_back(b * 2 * n + n + i);
    }
  }
  return {ag::gather_rows(x, hi), ag::gather_rows(x, oi)};
}

InstanceHeads::InstanceHeads(nn::ParameterStore& store, const std::string& name, std::size_t dim,
                             std::size_t clip_dim, double logit_scale)
    : logit_scale_(logit_scale) {
  norm_h_ = nn::LayerNorm(store, name + ".norm_h", dim);
  norm_o_ = nn::LayerNorm(store, name + ".norm_o", dim);
  box_h_ = nn::Mlp(store, name + ".box_h", {dim, dim, dim, 4});
  box_o_ = nn::Mlp(store, name + ".box_o", {dim, dim, dim, 4});
  obj_proj_ = nn::Linear(store, name + ".obj_proj", dim, clip_dim);
  background_ = nn::Linear(store, name + ".background", dim, 1);
  human_ = nn::Linear(store, name + ".human", dim, 1);
}

InstanceOutputs InstanceHeads::operator()(const Var& q_h, const Var& q_o, const Var& object_weights) const {
  InstanceOutputs out;
  Var h = norm_h_(q_h);
  Var o = norm_o_(q_o);
  out.boxes_h = ag::sigmoid(box_h_(h));
  out.boxes_o = ag::sigmoid(box_o_(o));
  Var cos = ag::matmul_nt(ag::normalize_rows(obj_proj_(o)), object_weights);
  out.object_logits = ag::concat_cols(ag::scale(cos, logit_scale_), background_(o));
  out.human_logit = human_(h);
  return out;
}

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0;
    for (std::size_t c = 0; c < row.size(); ++c) z += p(r, c) = std::exp(row[c] - mx);
    for (std::size_t c = 0; c < row.size(); ++c) p(r, c) /= z;
  }
  return p;
}

std::vector<double> object_confidence(const Matrix& probs) {
  std::vector<double> s(probs.rows(), 0.0);
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row(r);
    s[r] = row.size() > 1 ? *std::max_element(row.begin(), row.end() - 1) : 0.0;
  }
  return s;
}

Var form_interaction_queries(const Var& q_h, const Var& q_o, const Var& p) {
  if (q_h.rows() != q_o.rows() || q_h.cols() != q_o.cols() || p.cols() != q_h.cols() || p.rows() == 0 ||
      q_h.rows() % p.rows() != 0) {
    throw ValidationError("form_interaction_queries: shape mismatch");
  }
  const Var pt = p.rows() == q_h.rows() ? p : ag::tile_rows(p, q_h.rows() / p.rows());
  return ag::scale(ag::add(ag::add(q_h, pt), ag::add(q_o, pt)), 0.5);
}

}  // namespace zhoi
