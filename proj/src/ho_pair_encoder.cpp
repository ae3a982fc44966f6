#include "zhoi/ho_pair_encoder.hpp"

#include <cmath>

#include "zhoi/errors.hpp"

namespace zhoi {

LocalEncoderBlock::LocalEncoderBlock(nn::ParameterStore& store, const std::string& name, std::size_t dim,
                                     std::size_t hidden, double bn_momentum)
    : momentum_(bn_momentum) {
  bn_gamma_ = store.add_parameter(name + ".bn.gamma", Matrix(1, dim, 1.0));
  bn_beta_ = store.add_parameter(name + ".bn.beta", Matrix(1, dim));
  running_mean_ = store.add_buffer(name + ".bn.running_mean", Matrix(1, dim));
  running_var_ = store.add_buffer(name + ".bn.running_var", Matrix(1, dim, 1.0));
  // Depth-wise taps start near a centred delta so the block begins close to a
  // per-channel rescale.
  Matrix taps = nn::normal_matrix(9, dim, 0.1, store.rng());
  for (std::size_t c = 0; c < dim; ++c) taps(4, c) += 1.0;
  dw_ = store.add_parameter(name + ".dw", std::move(taps));
  conv_a_ = nn::Linear(store, name + ".conv_a", dim, hidden);
  conv_b_ = nn::Linear(store, name + ".conv_b", hidden, dim);
}

Var LocalEncoderBlock::operator()(const Var& x, std::size_t h, std::size_t w, std::size_t batch,
                                  bool training) {
  const std::size_t c = x.cols();
  if (c != bn_gamma_.cols()) {
    throw ValidationError("local encoder: " + std::to_string(c) + " channels, expected " +
                          std::to_string(bn_gamma_.cols()));
  }
  constexpr double eps = 1e-5;
  Var normed;
  if (training) {
    Matrix mu, var;
    normed = ag::batch_norm_train(x, bn_gamma_, bn_beta_, eps, &mu, &var);
    const double n = static_cast<double>(x.rows());
    auto& rm = running_mean_.mutable_value();
    auto& rv = running_var_.mutable_value();
    for (std::size_t j = 0; j < c; ++j) {
      rm[j] = (1 - momentum_) * rm[j] + momentum_ * mu[j];
      const double unbiased = n > 1 ? var[j] * n / (n - 1) : var[j];
      rv[j] = (1 - momentum_) * rv[j] + momentum_ * unbiased;
    }
  } else {
    Matrix shift(1, c), inv(1, c);
    for (std::size_t j = 0; j < c; ++j) {
      shift[j] = -running_mean_.value()[j];
      inv[j] = 1.0 / std::sqrt(running_var_.value()[j] + eps);
    }
    normed = ag::add_row(ag::mul_row(ag::mul_row(ag::add_row(x, ag::constant(shift)), ag::constant(inv)), bn_gamma_),
                         bn_beta_);
  }
  Var y = ag::depthwise_conv3x3(normed, dw_, h, w, batch);
  y = conv_b_(ag::gelu(conv_a_(y)));
  return ag::add(x, y);
}

AdditiveAttention::AdditiveAttention(nn::ParameterStore& store, const std::string& name, std::size_t dim)
    : dim_(dim) {
  wq_ = nn::Linear(store, name + ".wq", dim, dim);
  wk_ = nn::Linear(store, name + ".wk", dim, dim);
  wa_ = store.add_parameter(name + ".w_a", nn::normal_matrix(dim, 1, 1.0, store.rng()));
  out_ = nn::Linear(store, name + ".out", dim, dim);
}

Var AdditiveAttention::operator()(const Var& x, std::size_t groups, Matrix* alpha) const {
  if (groups == 0 || x.rows() % groups != 0) throw ValidationError("additive attention: rows not divisible by groups");
  const std::size_t len = x.rows() / groups;
  Var q = wq_(x);
  Var k = wk_(x);
  Var scores = ag::scale(ag::matmul(q, wa_), 1.0 / std::sqrt(static_cast<double>(dim_)));
  Var a = ag::softmax_rows(ag::reshape(scores, groups, len));
  if (alpha) *alpha = a.value();
  Var global = ag::grouped_weighted_sum(a, q);
  Var mixed = ag::mul(ag::repeat_rows(global, len), k);
  return ag::add(out_(mixed), x);
}

GlobalContextFormer::GlobalContextFormer(nn::ParameterStore& store, const std::string& name, std::size_t dim,
                                         std::size_t hidden) {
  Matrix taps = nn::normal_matrix(9, dim, 0.1, store.rng());
  for (std::size_t c = 0; c < dim; ++c) taps(4, c) += 1.0;
  dw_ = store.add_parameter(name + ".dw", std::move(taps));
  front_ = nn::Linear(store, name + ".front", dim, dim);
  attn_ = AdditiveAttention(store, name + ".attn", dim);
  norm_ = nn::LayerNorm(store, name + ".norm", hidden);
  lin_a_ = nn::Linear(store, name + ".lin_a", dim, hidden);
  lin_b_ = nn::Linear(store, name + ".lin_b", hidden, dim);
}

Var GlobalContextFormer::operator()(const Var& x, std::size_t h, std::size_t w, std::size_t batch,
                                    Matrix* alpha) const {
  Var y = ag::add(x, front_(ag::depthwise_conv3x3(x, dw_, h, w, batch)));
  y = attn_(y, batch, alpha);
  return ag::add(y, lin_b_(ag::gelu(norm_(lin_a_(y)))));
}

HoPairEncoder::HoPairEncoder(nn::ParameterStore& store, const std::string& name, HoPairEncoderConfig cfg)
    : cfg_(cfg) {
  input_ = nn::Linear(store, name + ".input", cfg.in_channels, cfg.dim);
  for (std::size_t i = 0; i < cfg.local_blocks; ++i) {
    local_.emplace_back(store, name + ".local" + std::to_string(i), cfg.dim, cfg.hidden);
  }
  global_ = GlobalContextFormer(store, name + ".global", cfg.dim, cfg.hidden);
}

Matrix align_crops(const std::vector<FeatureGrid>& grids, const std::vector<geometry::CornerBox>& boxes,
                   std::size_t roi) {
  if (grids.empty()) throw ValidationError("encoder: no feature grids");
  const bool whole = boxes.empty();
  if (!whole && boxes.size() != grids.size()) throw ValidationError("encoder: one box per grid required");
  const std::size_t c = grids.front().channels();
  const std::size_t per = roi * roi;
  Matrix out(grids.size() * per, c);
  for (std::size_t b = 0; b < grids.size(); ++b) {
    if (grids[b].channels() != c) throw ValidationError("encoder: grids disagree on channel count");
    const FeatureGrid crop = roi_align(grids[b], whole ? geometry::CornerBox{0, 0, 1, 1} : boxes[b], roi);
    std::copy(crop.values.storage().begin(), crop.values.storage().end(), out.data() + b * per * c);
  }
  return out;
}

Var HoPairEncoder::encode_aligned(const Var& aligned, std::size_t batch, bool training, Matrix* alpha) {
  if (aligned.cols() != cfg_.in_channels) {
    throw ValidationError("encoder: got " + std::to_string(aligned.cols()) + " channels, expected " +
                          std::to_string(cfg_.in_channels));
  }
  Var x = input_(aligned);
  for (auto& block : local_) x = block(x, cfg_.roi, cfg_.roi, batch, training);
  return global_(x, cfg_.roi, cfg_.roi, batch, alpha);
}

Var HoPairEncoder::operator()(const std::vector<FeatureGrid>& grids, const std::vector<geometry::CornerBox>& boxes,
                              bool training, Matrix* alpha) {
  return encode_aligned(ag::constant(align_crops(grids, boxes, cfg_.roi)), grids.size(), training, alpha);
}

}  // namespace zhoi
