#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "zhoi/model.hpp"

namespace zhoi {

/// Line-delimited metrics: {"step": s, "key": k, "value": v} per record,
/// values printed with 17 significant digits so logs compare bitwise.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& path);
  void record(std::uint64_t step, const std::string& key, double value);

  struct Record {
    std::uint64_t step;
    std::string key;
    double value;
  };
  const std::vector<Record>& records() const { return records_; }
  /// Values of one key in record order.
  std::vector<double> series(const std::string& key) const;

 private:
  std::unique_ptr<std::ofstream> out_;
  std::vector<Record> records_;
};

struct StepResult {
  double total = 0, box = 0, giou = 0, object = 0, verb = 0, recon = 0;
  double grad_norm = 0;
  double lr = 0;
};

/// One optimizer over a model plus a cache of frozen image features.
class Trainer {
 public:
  Trainer(HoiModel& model, TrainConfig cfg, MetricsLog* log = nullptr);

  /// Forward, Hungarian matching per image, composite loss, backward and an
  /// AdamW update. Throws RuntimeFailure naming the term on a non-finite loss.
  StepResult step(const std::vector<const Sample*>& batch);

  /// Runs cfg.epochs epochs over the (fraction-subsampled) dataset. The
  /// learning rate is multiplied by 0.1 from epoch index lr_drop on.
  /// `on_epoch(epoch, mean_loss)` runs after every epoch when set.
  void fit(const Dataset& data, const std::function<void(std::size_t, double)>& on_epoch = {});

  /// Learning rate used for the 0-based epoch index.
  double lr_at_epoch(std::size_t epoch) const;
  /// Sample indices (sorted) kept by train_fraction for a dataset of n images.
  std::vector<std::size_t> subset_indices(std::size_t n) const;

  const TrainConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return steps_; }
  const std::vector<double>& epoch_lrs() const { return epoch_lrs_; }

 private:
  const ImageFeatures& cached(const Sample& s);

  HoiModel& model_;
  TrainConfig cfg_;
  MetricsLog* log_;
  nn::AdamW opt_;
  std::map<std::string, ImageFeatures> cache_;
  std::uint64_t steps_ = 0;
  std::vector<double> epoch_lrs_;
};

/// Extra run metadata persisted next to the weights.
struct CheckpointMeta {
  nlohmann::json train;   // TrainConfig
  nlohmann::json split;   // SplitSpec or null
  std::uint64_t seed = 0;
};

/// Single-file container: magic, format version, JSON header (model config,
/// label space, metadata) and every named parameter and buffer in store order.
void save_checkpoint(const std::filesystem::path& path, const HoiModel& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  std::unique_ptr<HoiModel> model;
  CheckpointMeta meta;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Loads weights into an existing model. Throws ValidationError when the
/// stored model config or label space differs from the model's.
CheckpointMeta load_weights(const std::filesystem::path& path, HoiModel& model);

}  // namespace zhoi
