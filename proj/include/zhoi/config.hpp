#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "zhoi/inference_and_eval.hpp"
#include "zhoi/label_space.hpp"
#include "zhoi/matching_and_loss.hpp"
#include "zhoi/visual_frontend.hpp"

namespace zhoi {

struct ModelConfig {
  std::size_t dim = 256;
  std::size_t queries = 64;
  std::size_t heads = 8;
  std::size_t ffn = 1024;
  std::size_t decoder_layers = 3;
  std::size_t verb_layers = 1;
  bool verb_query_self_attention = false;
  std::size_t clip_dim = 512;
  std::size_t clip_patch = 32;
  std::size_t backbone_channels = 64;
  std::size_t image_size = 64;
  std::size_t roi = 7;
  double logit_scale = 20.0;
  TextMode text_mode = TextMode::Compositional;
  double text_noise = 0.1;
  std::filesystem::path text_dir;
  bool train_text_weights = false;
  std::uint64_t backbone_seed = 1;
  std::uint64_t clip_seed = 2;
  std::uint64_t text_seed = 3;
  std::uint64_t init_seed = 4;
  LossWeights loss;
  ReconLoss recon = ReconLoss::L1;
  Fusion fusion = Fusion::Sum;
  std::size_t top_k = 100;

  /// Small dimensions for CPU runs; structure (3 decoder layers, 1 verb
  /// layer, 64 queries) is unchanged.
  static ModelConfig desk();
  void validate() const;
};

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double clip_grad_norm = 0.1;
  std::size_t epochs = 30;
  std::size_t lr_drop = 20;
  std::size_t batch_size = 4;
  double train_fraction = 1.0;
  std::uint64_t seed = 0;
  void validate() const;
};

struct SceneConfig {
  std::size_t image_size = 64;
  std::vector<std::string> relations{"above", "below", "left_of", "right_of", "overlapping"};
  std::vector<std::string> colors{"red", "green", "blue", "yellow", "cyan", "magenta", "orange", "purple"};
  std::size_t pairs_per_image = 1;
  double noise = 0.03;
  double min_size = 0.18;  // box side, fraction of the image
  double max_size = 0.30;
  double gap = 0.03;        // minimum separation for directional relations
  double overlap = 0.3;     // minimum covered fraction of the object for "overlapping"
  double long_tail = 0.0;   // Zipf exponent over HOIs (0 = uniform)
  std::size_t max_retries = 200;
  void validate() const;
};

struct SplitConfig {
  Setting setting = Setting::Full;
  SplitParams params;
};

struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  TrainConfig train;
  SceneConfig scene;
  SplitConfig split;
  std::uint64_t seed = 0;
  std::filesystem::path label_space;  // empty: synthetic space from the scene config
  std::filesystem::path data_dir;
  std::filesystem::path out_dir = "runs/default";
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const SceneConfig& c);
nlohmann::json to_json(const RunConfig& c);
/// Strict readers: keys missing from the document keep their defaults,
/// unknown keys and wrong types raise ValidationError.
void from_json(const nlohmann::json& j, ModelConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void from_json(const nlohmann::json& j, SceneConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Applies environment overrides of the form PREFIX<SECTION>_<KEY>=value,
/// e.g. ZHOI_TRAIN_EPOCHS=5 or ZHOI_SEED=3; values are parsed as JSON
/// (falling back to a string). Returns the applied variable names.
std::vector<std::string> apply_env_overrides(nlohmann::json& doc, const std::string& prefix = "ZHOI_");

}  // namespace zhoi
