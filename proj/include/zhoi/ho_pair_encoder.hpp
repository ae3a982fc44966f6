#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "zhoi/autograd.hpp"
#include "zhoi/nn.hpp"
#include "zhoi/visual_frontend.hpp"

namespace zhoi {

using ag::Var;

/// Residual inverted bottleneck on a token grid:
///   x + Conv1b(GeLU(Conv1a(DWConv3(BN(x)))))
/// x stacks `batch` grids of h*w tokens.
class LocalEncoderBlock {
 public:
  LocalEncoderBlock() = default;
  LocalEncoderBlock(nn::ParameterStore& store, const std::string& name, std::size_t dim,
                    std::size_t hidden, double bn_momentum = 0.1);
  /// Training mode normalizes with batch statistics (over every token of the
  /// batch) and updates the running estimates; eval mode uses the running ones.
  Var operator()(const Var& x, std::size_t h, std::size_t w, std::size_t batch, bool training);

 private:
  Var bn_gamma_, bn_beta_, running_mean_, running_var_, dw_;
  nn::Linear conv_a_, conv_b_;
  double momentum_ = 0.1;
};

/// Linear-cost additive attention over each group of `len` tokens:
///   Q = x Wq, K = x Wk, alpha = softmax_L(Q w_a / sqrt(d)),
///   q* = sum_i alpha_i Q_i, out_i = Out(q* . K_i) + x_i
class AdditiveAttention {
 public:
  AdditiveAttention() = default;
  AdditiveAttention(nn::ParameterStore& store, const std::string& name, std::size_t dim);
  /// x is (groups*len) x d. `alpha` (optional) receives groups x len weights.
  Var operator()(const Var& x, std::size_t groups, Matrix* alpha = nullptr) const;

 private:
  nn::Linear wq_, wk_, out_;
  Var wa_;
  std::size_t dim_ = 0;
};

/// Conv front end, additive attention and a normalized linear block, each residual.
class GlobalContextFormer {
 public:
  GlobalContextFormer() = default;
  GlobalContextFormer(nn::ParameterStore& store, const std::string& name, std::size_t dim,
                      std::size_t hidden);
  Var operator()(const Var& x, std::size_t h, std::size_t w, std::size_t batch,
                 Matrix* alpha = nullptr) const;

 private:
  Var dw_;
  nn::Linear front_;
  AdditiveAttention attn_;
  nn::LayerNorm norm_;
  nn::Linear lin_a_, lin_b_;
};

struct HoPairEncoderConfig {
  std::size_t in_channels = 64;  // backbone channels
  std::size_t dim = 256;
  std::size_t hidden = 512;
  std::size_t roi = 7;
  std::size_t local_blocks = 2;
};

/// roi_align -> input projection -> local blocks -> global context former,
/// producing V_G with roi*roi tokens per crop.
class HoPairEncoder {
 public:
  HoPairEncoder() = default;
  HoPairEncoder(nn::ParameterStore& store, const std::string& name, HoPairEncoderConfig cfg);

  /// Crops each grid with its box (whole image when `boxes` is empty) and
  /// stacks the results; returns (crops*roi*roi) x dim.
  Var operator()(const std::vector<FeatureGrid>& grids, const std::vector<geometry::CornerBox>& boxes,
                 bool training, Matrix* alpha = nullptr);
  /// Encoder body on already aligned tokens ((batch*roi*roi) x in_channels).
  Var encode_aligned(const Var& aligned, std::size_t batch, bool training, Matrix* alpha = nullptr);

  const HoPairEncoderConfig& config() const { return cfg_; }
  std::size_t tokens_per_crop() const { return cfg_.roi * cfg_.roi; }

 private:
  HoPairEncoderConfig cfg_;
  nn::Linear input_;
  std::vector<LocalEncoderBlock> local_;
  GlobalContextFormer global_;
};

/// roi_align of each (grid, box) pair stacked row-wise; constant input.
Matrix align_crops(const std::vector<FeatureGrid>& grids, const std::vector<geometry::CornerBox>& boxes,
                   std::size_t roi);

}  // namespace zhoi
