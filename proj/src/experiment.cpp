#include "zhoi/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "zhoi/errors.hpp"
#include "zhoi/rng.hpp"

namespace zhoi {

LabelSpace run_label_space(const RunConfig& rc) {
  if (rc.label_space.empty()) return synthetic_label_space(rc.scene);
  std::ifstream in(rc.label_space);
  if (!in) throw ValidationError("cannot open label space " + rc.label_space.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("label space " + rc.label_space.string() + ": " + e.what());
  }
  return LabelSpace::from_json(doc);
}

RunConfig with_seed(RunConfig rc, std::uint64_t seed) {
  rc.seed = seed;
  rc.train.seed = seed;
  rc.model.init_seed = derive_seed(seed, "model/init");
  return rc;
}

TrainOutcome train_model(const RunConfig& rc, const LabelSpace& space, const Dataset& train, MetricsLog* log,
                         const std::function<void(std::size_t, double)>& on_epoch) {
  TrainOutcome out;
  out.model = std::make_unique<HoiModel>(rc.model, space);
  Trainer trainer(*out.model, rc.train, log);
  trainer.fit(train, [&](std::size_t e, double loss) {
    out.epoch_losses.push_back(loss);
    if (on_epoch) on_epoch(e, loss);
  });
  return out;
}

SyntheticBenchmark make_synthetic_benchmark(const RunConfig& rc, std::size_t n_train, std::size_t n_test) {
  SyntheticBenchmark b;
  const LabelSpace base = synthetic_label_space(rc.scene);
  b.split = make_split(base, rc.split.setting, rc.split.params, rc.seed);
  std::optional<std::vector<std::size_t>> allowed;
  if (!b.split.unseen_hoi_ids.empty()) allowed = b.split.seen_hoi_ids(base.num_hois());
  auto train = generate_synthetic_dataset(rc.scene, base, n_train, derive_seed(rc.seed, "bench/train"), allowed);
  b.space = base.with_train_counts(train.train_counts);
  b.train = std::move(train.data);
  b.test = generate_synthetic_dataset(rc.scene, base, n_test, derive_seed(rc.seed, "bench/test")).data;
  return b;
}

AblationAxis parse_ablation_axis(const std::string& s) {
  if (s == "recon") return AblationAxis::Recon;
  if (s == "verb-layers") return AblationAxis::VerbLayers;
  throw ValidationError("unknown ablation axis '" + s + "' (expected recon or verb-layers)");
}

std::vector<AblationRow> run_ablation(const RunConfig& rc, AblationAxis axis, const SyntheticBenchmark& bench) {
  std::vector<RunConfig> configs;
  std::vector<std::string> labels;
  if (axis == AblationAxis::Recon) {
    for (ReconLoss r : {ReconLoss::None, ReconLoss::L1, ReconLoss::L2, ReconLoss::L1L2}) {
      RunConfig c = rc;
      c.model.recon = r;
      configs.push_back(c);
      labels.emplace_back(to_string(r));
    }
  } else {
    for (std::size_t layers : {1u, 2u, 3u}) {
      RunConfig c = rc;
      c.model.verb_layers = layers;
      configs.push_back(c);
      labels.push_back(std::to_string(layers));
    }
  }
  const EvalGroundTruth gt = ground_truth_from(bench.test, bench.space);
  const SplitSpec* split = bench.split.unseen_hoi_ids.empty() ? nullptr : &bench.split;
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    AblationRow row;
    row.label = labels[i];
    try {
      TrainOutcome t = train_model(configs[i], bench.space, bench.train);
      row.final_loss = t.epoch_losses.empty() ? 0.0 : t.epoch_losses.back();
      row.finite = std::isfinite(row.final_loss);
      row.report = evaluate(t.model->detect_all(bench.test), gt, bench.space, split);
    } catch (const RuntimeFailure&) {
      // A diverged setting is a result of the sweep, not a failure of it.
      row.finite = false;
      row.final_loss = std::nan("");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation(AblationAxis axis, const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %12s %8s %8s %8s %8s\n", axis == AblationAxis::Recon ? "recon" : "verb layers",
                "final loss", "Full", "Seen", "Unseen", "KO Full");
  os << line;
  for (const auto& r : rows) {
    const auto& d = r.report.default_protocol;
    std::snprintf(line, sizeof line, "%-12s %12.5f %8.2f %8.2f %8.2f %8.2f\n", r.label.c_str(), r.final_loss,
                  100 * d.full.map, 100 * d.seen.map, 100 * d.unseen.map, 100 * r.report.known_object.full.map);
    os << line;
  }
  return os.str();
}

double permuted_label_chance(const std::vector<Detection>& dets, const EvalGroundTruth& gt, const LabelSpace& space,
                             const SplitSpec* split, std::size_t trials, std::uint64_t seed, bool unseen_only) {
  if (trials == 0) throw ValidationError("permuted_label_chance: trials must be positive");
  std::vector<std::size_t> labels;
  for (const auto& list : gt.instances)
    for (const auto& g : list) labels.push_back(g.hoi_id);
  Rng rng(seed);
  double acc = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    rng.shuffle(labels.begin(), labels.end());
    EvalGroundTruth shuffled = gt;
    std::size_t k = 0;
    for (auto& list : shuffled.instances)
      for (auto& g : list) g.hoi_id = labels[k++];
    const ProtocolReport r = evaluate_protocol(dets, shuffled, space, split, Protocol::Default);
    acc += unseen_only ? r.unseen.map : r.full.map;
  }
  return acc / static_cast<double>(trials);
}

}  // namespace zhoi
