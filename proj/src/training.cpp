#include <algorithm>
#include "zhoi/training.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

#include "zhoi/errors.hpp"
#include "zhoi/rng.hpp"

namespace zhoi {

using nlohmann::json;

MetricsLog::MetricsLog(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_ = std::make_unique<std::ofstream>(path);
  if (!*out_) throw RuntimeFailure("metrics: cannot open " + path.string());
}

void MetricsLog::record(std::uint64_t step, const std::string& key, double value) {
  records_.push_back({step, key, value});
  if (!out_) return;
  // Hand formatting: the json library's shortest round-trip printer is fine
  // too, but %.17g keeps the format obvious to any reader.
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  const char* v = std::isfinite(value) ? buf : "null";
  *out_ << "{\"step\": " << step << ", \"key\": " << json(key).dump() << ", \"value\": " << v << "}\n";
  out_->flush();
}

std::vector<double> MetricsLog::series(const std::string& key) const {
  std::vector<double> s;
  for (const auto& r : records_)
    if (r.key == key) s.push_back(r.value);
  return s;
}

namespace {

nn::AdamWOptions adam_options(const TrainConfig& c) {
  c.validate();
  nn::AdamWOptions o;
  o.lr = c.lr;
  o.weight_decay = c.weight_decay;
  o.clip_grad_norm = c.clip_grad_norm;
  return o;
}

}  // namespace

Trainer::Trainer(HoiModel& model, TrainConfig cfg, MetricsLog* log)
    : model_(model), cfg_(cfg), log_(log), opt_(model.store(), adam_options(cfg)) {}

const ImageFeatures& Trainer::cached(const Sample& s) {
  auto it = cache_.find(s.id);
  if (it == cache_.end()) it = cache_.emplace(s.id, model_.features(s.image)).first;
  return it->second;
}

StepResult Trainer::step(const std::vector<const Sample*>& batch) {
  if (batch.empty()) throw ValidationError("train_step: empty batch");
  std::vector<const ImageFeatures*> feats;
  std::vector<GroundTruth> gts;
  for (const auto* s : batch) {
    feats.push_back(&cached(*s));
    gts.push_back(training_targets(*s));
  }
  const ForwardOutput f = model_.forward(feats, true);
  const auto& mc = model_.config();
  std::vector<Assignment> assignments;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (gts[b].empty()) {
      assignments.emplace_back();
      continue;
    }
    const Matrix cost = match_cost(f.pred, b, gts[b], mc.loss);
    // A non-finite cost means non-finite predictions; leave the image
    // unmatched so the loss check below reports which term blew up.
    const bool finite = std::all_of(cost.storage().begin(), cost.storage().end(), [](double x) { return std::isfinite(x); });
    assignments.push_back(finite ? hungarian_solve(cost) : Assignment{});
  }
  const LossTerms loss = compute_losses(f.pred, gts, assignments, f.spatial_mean, mc.loss, mc.recon);

  const std::pair<const char*, double> terms[] = {{"box", loss.box},       {"giou", loss.giou},
                                                  {"object", loss.object}, {"verb", loss.verb},
                                                  {"recon", loss.recon},   {"total", loss.total.item()}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      std::string dump = "train_step: non-finite loss term '" + std::string(name) + "' at step " +
                         std::to_string(steps_) + " (";
      for (const auto& [n2, v2] : terms) dump += std::string(n2) + "=" + std::to_string(v2) + " ";
      dump += "images:";
      for (const auto* s : batch) dump += " " + s->id;
      throw RuntimeFailure(dump + ")");
    }
  }

  model_.store().zero_grad();
  ag::backward(loss.total);
  opt_.step();

  StepResult r{loss.total.item(), loss.box, loss.giou, loss.object, loss.verb, loss.recon, opt_.last_grad_norm(),
               opt_.lr()};
  if (log_) {
    for (const auto& [name, value] : terms) log_->record(steps_, std::string("loss/") + name, value);
    log_->record(steps_, "grad_norm", r.grad_norm);
    log_->record(steps_, "lr", r.lr);
  }
  ++steps_;
  return r;
}

double Trainer::lr_at_epoch(std::size_t epoch) const { return epoch >= cfg_.lr_drop ? 0.1 * cfg_.lr : cfg_.lr; }

std::vector<std::size_t> Trainer::subset_indices(std::size_t n) const {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (cfg_.train_fraction >= 1.0) return idx;
  const auto keep = static_cast<std::size_t>(std::floor(cfg_.train_fraction * static_cast<double>(n)));
  if (keep == 0 && n > 0) throw ValidationError("fit: train_fraction keeps no images");
  Rng rng(derive_seed(cfg_.seed, "train/fraction"));
  rng.shuffle(idx.begin(), idx.end());
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void Trainer::fit(const Dataset& data, const std::function<void(std::size_t, double)>& on_epoch) {
  std::vector<std::size_t> pool = subset_indices(data.samples.size());
  if (pool.empty()) throw ValidationError("fit: no training images");
  for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    opt_.set_lr(lr_at_epoch(epoch));
    epoch_lrs_.push_back(opt_.lr());
    std::vector<std::size_t> order = pool;
    Rng rng(derive_seed(cfg_.seed, "train/epoch/" + std::to_string(epoch)));
    rng.shuffle(order.begin(), order.end());
    double sum = 0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      std::vector<const Sample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg_.batch_size); ++i)
        batch.push_back(&data.samples[order[i]]);
      sum += step(batch).total;
      ++count;
    }
    const double mean = sum / static_cast<double>(count);
    if (log_) {
      log_->record(steps_, "epoch/loss", mean);
      log_->record(steps_, "epoch/lr", opt_.lr());
    }
    if (on_epoch) on_epoch(epoch, mean);
  }
}

// ---- checkpoint ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'Z', 'H', 'O', 'I', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class T>
T take(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ValidationError("checkpoint: truncated file");
  return v;
}

json header_of(const HoiModel& model, const CheckpointMeta& meta) {
  return json{{"model", to_json(model.config())},
              {"label_space", model.space().to_json()},
              {"train", meta.train},
              {"split", meta.split},
              {"seed", meta.seed}};
}

struct RawCheckpoint {
  json header;
  std::vector<std::pair<std::string, Matrix>> arrays;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw ValidationError("checkpoint: bad magic in " + path.string());
  const auto version = take<std::uint32_t>(in);
  if (version != kVersion) throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
  RawCheckpoint raw;
  const auto hlen = take<std::uint64_t>(in);
  std::string text(hlen, '\0');
  in.read(text.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw ValidationError("checkpoint: truncated header");
  raw.header = json::parse(text);
  const auto count = take<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto nlen = take<std::uint32_t>(in);
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    const auto rows = take<std::uint64_t>(in);
    const auto cols = take<std::uint64_t>(in);
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw ValidationError("checkpoint: truncated array '" + name + "'");
    raw.arrays.emplace_back(std::move(name), std::move(m));
  }
  return raw;
}

CheckpointMeta meta_of(const json& h) {
  return CheckpointMeta{h.at("train"), h.at("split"), h.at("seed").get<std::uint64_t>()};
}

void assign_arrays(const RawCheckpoint& raw, HoiModel& model) {
  auto& entries = model.store().entries();
  if (raw.arrays.size() != entries.size()) throw ValidationError("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, m] = raw.arrays[i];
    if (name != entries[i].name || !m.same_shape(entries[i].var.value())) {
      throw ValidationError("checkpoint: array '" + name + "' does not match parameter '" + entries[i].name + "'");
    }
    entries[i].var.mutable_value() = m;
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const HoiModel& model, const CheckpointMeta& meta) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("checkpoint: cannot write " + path.string());
  out.write(kMagic, 8);
  put(out, kVersion);
  const std::string text = header_of(model, meta).dump();
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto& entries = model.store().entries();
  put<std::uint64_t>(out, entries.size());
  for (const auto& e : entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    const Matrix& m = e.var.value();
    put<std::uint64_t>(out, m.rows());
    put<std::uint64_t>(out, m.cols());
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw RuntimeFailure("checkpoint: write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  RawCheckpoint raw = read_raw(path);
  ModelConfig cfg;
  from_json(raw.header.at("model"), cfg);
  LoadedCheckpoint out;
  out.model = std::make_unique<HoiModel>(cfg, LabelSpace::from_json(raw.header.at("label_space")));
  assign_arrays(raw, *out.model);
  out.meta = meta_of(raw.header);
  return out;
}

CheckpointMeta load_weights(const std::filesystem::path& path, HoiModel& model) {
  RawCheckpoint raw = read_raw(path);
  if (raw.header.at("model") != to_json(model.config())) {
    throw ValidationError("checkpoint: stored model config differs from the current one");
  }
  if (raw.header.at("label_space") != model.space().to_json()) {
    throw ValidationError("checkpoint: stored label space differs from the current one");
  }
  assign_arrays(raw, model);
  return meta_of(raw.header);
}

}  // namespace zhoi
