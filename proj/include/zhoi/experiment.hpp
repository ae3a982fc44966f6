#pragma once

// End-to-end runs shared by the command line tool and the acceptance runner:
// build a label space and data, train, evaluate, sweep ablations.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "zhoi/config.hpp"
#include "zhoi/synthetic.hpp"
#include "zhoi/training.hpp"

namespace zhoi {

/// The label space a run works in: the JSON file named by rc.label_space, or
/// the synthetic relation x colour space of rc.scene.
LabelSpace run_label_space(const RunConfig& rc);

/// Config with one seed propagated to the run, the trainer and the model init.
RunConfig with_seed(RunConfig rc, std::uint64_t seed);

struct TrainOutcome {
  std::unique_ptr<HoiModel> model;
  std::vector<double> epoch_losses;
};

/// Builds a model from rc.model and fits it on `train` with rc.train.
TrainOutcome train_model(const RunConfig& rc, const LabelSpace& space, const Dataset& train, MetricsLog* log = nullptr,
                         const std::function<void(std::size_t, double)>& on_epoch = {});

/// Synthetic benchmark: a training set drawn only from the split's seen HOIs
/// and a test set drawn from every HOI, both from rc.scene.
struct SyntheticBenchmark {
  LabelSpace space;
  SplitSpec split;
  Dataset train;
  Dataset test;
};
SyntheticBenchmark make_synthetic_benchmark(const RunConfig& rc, std::size_t n_train, std::size_t n_test);

enum class AblationAxis { Recon, VerbLayers };
AblationAxis parse_ablation_axis(const std::string& s);

struct AblationRow {
  std::string label;
  double final_loss = 0;
  bool finite = true;
  EvalReport report;
};

/// Trains one model per setting of the axis on the same benchmark:
/// recon -> {none, l1, l2, l1+l2}; verb-layers -> {1, 2, 3}.
std::vector<AblationRow> run_ablation(const RunConfig& rc, AblationAxis axis, const SyntheticBenchmark& bench);
std::string format_ablation(AblationAxis axis, const std::vector<AblationRow>& rows);

/// Mean Default-protocol mAP (Unseen group when `unseen_only`, else Full)
/// over `trials` evaluations in which the HOI labels of the ground truth
/// instances are randomly permuted among themselves: the empirical chance
/// level of a detector's scores against scrambled labels.
double permuted_label_chance(const std::vector<Detection>& dets, const EvalGroundTruth& gt, const LabelSpace& space,
                             const SplitSpec* split, std::size_t trials, std::uint64_t seed, bool unseen_only);

}  // namespace zhoi
