#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "zhoi/config.hpp"
#include "zhoi/dataset.hpp"
#include "zhoi/ho_pair_encoder.hpp"
#include "zhoi/inference_and_eval.hpp"
#include "zhoi/instance_interactor.hpp"
#include "zhoi/interaction_semantics.hpp"
#include "zhoi/label_space.hpp"
#include "zhoi/matching_and_loss.hpp"
#include "zhoi/nn.hpp"
#include "zhoi/verb_learning.hpp"
#include "zhoi/visual_frontend.hpp"

namespace zhoi {

/// Frozen per-image inputs: backbone grid and CLIP-like spatial tokens. Both
/// stubs are fixed functions of the image, so these can be cached.
struct ImageFeatures {
  FeatureGrid grid;
  SpatialTokens clip;
};

/// Attention maps captured during a forward pass.
struct ForwardTrace {
  std::vector<Matrix> verb_cross;          // per verb-decoder layer, (batch*A) x L_g
  InteractionDecoder::Trace interaction;   // per layer, (batch*N) x L_sp / L_g
  Matrix additive_alpha;                   // batch x L_g
};

struct ForwardOutput {
  Predictions pred;
  Matrix spatial_mean;  // batch x D_clip, mean V_sp token per image
};

/// The full detector: frontend stubs, HO-pair encoder, instance decoder and
/// heads, verb decoder, interaction decoder and the knowledge-retrieval verb
/// predictor, with text-derived classifier weights for the whole label space.
class HoiModel {
 public:
  HoiModel(ModelConfig cfg, LabelSpace space);
  HoiModel(const HoiModel&) = delete;
  HoiModel& operator=(const HoiModel&) = delete;

  ImageFeatures features(const Image& image) const;
  ForwardOutput forward(const std::vector<const ImageFeatures*>& batch, bool training,
                        ForwardTrace* trace = nullptr);

  /// Eval-mode inference for a batch of images; one detection list per image.
  std::vector<std::vector<Detection>> detect(const std::vector<const ImageFeatures*>& batch,
                                             const std::vector<std::string>& image_ids);
  /// Detections for every sample of a dataset, in sample order.
  std::vector<Detection> detect_all(const Dataset& data, std::size_t batch_size = 8);

  nn::ParameterStore& store() { return store_; }
  const nn::ParameterStore& store() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  const LabelSpace& space() const { return space_; }
  const ClassifierWeights& text_weights() const { return text_; }

 private:
  ModelConfig cfg_;
  LabelSpace space_;
  BackboneStub backbone_;
  ClipVisualStub clip_;
  ClassifierWeights text_;
  nn::ParameterStore store_;
  Var w_verbs_, w_objects_;
  HoPairEncoder encoder_;
  InstanceDecoder instance_;
  InstanceHeads heads_;
  VerbDecoder verb_decoder_;
  InteractionDecoder interaction_;
  VerbPredictor verb_predictor_;
  Matrix pos_g_;   // roi*roi x D
  Matrix pos_sp_;  // L_sp x D, computed on first use
};

/// Training targets for one sample: annotations sharing the same human box,
/// object box and object class are merged into one pair with the union of
/// their verbs.
GroundTruth training_targets(const Sample& sample);

}  // namespace zhoi
