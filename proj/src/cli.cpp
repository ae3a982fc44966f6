#include "zhoi/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "zhoi/errors.hpp"
#include "zhoi/experiment.hpp"

namespace zhoi {

namespace fs = std::filesystem;
using nlohmann::json;

void write_npy(const std::string& path, const std::vector<double>& values, std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols) throw ValidationError("write_npy: size mismatch");
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (" + std::to_string(rows) + ", " +
                       std::to_string(cols) + "), }";
  // Magic (6) + version (2) + length (2) + header + '\n' padded to 64 bytes.
  const std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path);
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out << header;
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out) throw RuntimeFailure("short write to " + path);
}

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
  std::string out_dir;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON run config (unknown keys are rejected)");
  sub->add_option("--seed", c.seed, "Seed for data, splits, initialization and training order");
  sub->add_flag("--dry-run", c.dry_run, "Validate the configuration and inputs, then exit");
  sub->add_option("--out", c.out_dir, "Output directory (default: config out_dir)");
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

RunConfig resolve(const Common& c) {
  json doc = c.config.empty() ? json::object() : read_json_file(c.config);
  apply_env_overrides(doc);
  RunConfig rc;
  from_json(doc, rc);
  if (!c.out_dir.empty()) rc.out_dir = c.out_dir;
  if (c.seed) rc = with_seed(rc, *c.seed);
  rc.validate();
  return rc;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ValidationError(std::string(what) + " is required");
  if (!fs::exists(path)) throw ValidationError(std::string(what) + " not found: " + path);
}

// --label-space, then the config, then label_space.json next to or above the
// data directory, then the synthetic space.
LabelSpace resolve_space(RunConfig rc, const std::string& flag, const std::string& data_dir) {
  if (!flag.empty()) {
    rc.label_space = flag;
  } else if (rc.label_space.empty() && !data_dir.empty()) {
    for (const fs::path& p : {fs::path(data_dir) / "label_space.json", fs::path(data_dir).parent_path() / "label_space.json"})
      if (fs::exists(p)) {
        rc.label_space = p;
        break;
      }
  }
  return run_label_space(rc);
}

Dataset load_data_dir(const std::string& dir, std::size_t image_size) {
  const fs::path ann = fs::path(dir) / "annotations.json";
  if (!fs::exists(ann)) throw ValidationError("no annotations.json in " + dir);
  return load_annotations(ann, fs::path(dir) / "images", image_size);
}

std::optional<SplitSpec> load_split(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return SplitSpec::from_json(read_json_file(path));
}

void print_dry_run(std::ostream& out, const std::string& cmd, const RunConfig& rc) {
  out << json{{"dry_run", true}, {"command", cmd}, {"config", to_json(rc)}}.dump() << '\n';
}

// Rows of the matrix must be probability distributions before rendering.
void check_row_stochastic(const Matrix& m, const std::string& name) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (!(m(r, c) >= 0.0)) throw RuntimeFailure(name + ": negative or NaN attention weight");
      s += m(r, c);
    }
    if (std::abs(s - 1.0) > 1e-6) throw RuntimeFailure(name + ": row " + std::to_string(r) + " sums to " + std::to_string(s));
  }
}

void export_matrix(const fs::path& dir, const std::string& stem, const Matrix& m) {
  check_row_stochastic(m, stem);
  write_npy((dir / (stem + ".npy")).string(), m.storage(), m.rows(), m.cols());
  // Rows are distributions; stretch by the global maximum so the image is visible.
  const double peak = *std::max_element(m.storage().begin(), m.storage().end());
  std::vector<double> img(m.storage());
  if (peak > 0)
    for (double& v : img) v /= peak;
  write_pgm(dir / (stem + ".pgm"), img, m.rows(), m.cols());
}

void export_row_as_grid(const fs::path& dir, const std::string& stem, const Matrix& m, std::size_t row,
                        std::size_t h, std::size_t w) {
  if (h * w != m.cols()) throw RuntimeFailure(stem + ": attention width does not match the token grid");
  std::vector<double> v(m.row(row).begin(), m.row(row).begin() + static_cast<std::ptrdiff_t>(m.cols()));
  write_npy((dir / (stem + ".npy")).string(), v, h, w);
  const double peak = *std::max_element(v.begin(), v.end());
  if (peak > 0)
    for (double& x : v) x /= peak;
  write_pgm(dir / (stem + ".pgm"), v, h, w);
}

struct Args {
  Common common;
  // split
  std::string setting, label_space, output;
  std::optional<std::size_t> n;
  // synth
  std::size_t n_images = 32, n_test = 0;
  // train / eval / infer
  std::string data, split, checkpoint, detections, image;
  std::optional<std::size_t> epochs, lr_drop;
  std::optional<double> fraction, lr;
  std::optional<std::size_t> top_k;
  // ablate
  std::string axis;
  std::size_t n_train = 16;
};

int cmd_synth(const Args& a, std::ostream& out) {
  const RunConfig rc = resolve(a.common);
  if (a.n_images == 0) throw ValidationError("--n must be positive");
  if (a.common.dry_run) {
    print_dry_run(out, "synth", rc);
    return kExitOk;
  }
  const SyntheticBenchmark b = make_synthetic_benchmark(rc, a.n_images, a.n_test);
  fs::create_directories(rc.out_dir);
  save_dataset(b.train, rc.out_dir / "train");
  if (a.n_test > 0) save_dataset(b.test, rc.out_dir / "test");
  write_json_file(rc.out_dir / "label_space.json", b.space.to_json());
  write_json_file(rc.out_dir / "split.json", b.split.to_json());
  write_json_file(rc.out_dir / "config.json", to_json(rc));
  out << "wrote " << b.train.samples.size() << " train / " << b.test.samples.size() << " test images, "
      << b.space.num_hois() << " HOIs, " << b.split.unseen_hoi_ids.size() << " unseen, to " << rc.out_dir.string()
      << '\n';
  return kExitOk;
}

int cmd_split(const Args& a, std::ostream& out) {
  RunConfig rc = resolve(a.common);
  if (!a.setting.empty()) rc.split.setting = parse_setting(a.setting);
  if (a.n) {
    switch (rc.split.setting) {
      case Setting::UV: rc.split.params.n_unseen_verb = *a.n; break;
      case Setting::UO: rc.split.params.n_unseen_object = *a.n; break;
      default: rc.split.params.n_unseen_hoi = *a.n; break;
    }
  }
  const LabelSpace space = resolve_space(rc, a.label_space, "");
  if (a.common.dry_run) {
    print_dry_run(out, "split", rc);
    return kExitOk;
  }
  const SplitSpec s = make_split(space, rc.split.setting, rc.split.params, rc.seed);
  const std::size_t unseen = s.unseen_hoi_ids.size();
  out << to_string(s.setting) << " seed " << s.seed << ": " << unseen << " unseen, " << space.num_hois() - unseen
      << " seen\n";
  if (a.output.empty()) {
    out << s.to_json().dump() << '\n';
  } else {
    write_json_file(a.output, s.to_json());
  }
  return kExitOk;
}

int cmd_train(const Args& a, std::ostream& out) {
  RunConfig rc = resolve(a.common);
  if (a.epochs) rc.train.epochs = *a.epochs;
  if (a.lr_drop) rc.train.lr_drop = *a.lr_drop;
  if (a.fraction) rc.train.train_fraction = *a.fraction;
  if (a.lr) rc.train.lr = *a.lr;
  rc.validate();
  require_file(a.data, "--data");
  const LabelSpace space = resolve_space(rc, a.label_space, a.data);
  const auto split = load_split(a.split);
  if (a.common.dry_run) {
    print_dry_run(out, "train", rc);
    return kExitOk;
  }
  Dataset data = load_data_dir(a.data, rc.model.image_size);
  if (split) data = filter_training_annotations(data, space, *split);
  fs::create_directories(rc.out_dir);
  MetricsLog log(rc.out_dir / "metrics.jsonl");
  TrainOutcome t = train_model(rc, space, data, &log, [&](std::size_t e, double loss) {
    out << "epoch " << e << " loss " << std::setprecision(6) << loss << '\n';
  });
  save_checkpoint(rc.out_dir / "checkpoint.bin", *t.model,
                  CheckpointMeta{to_json(rc.train), split ? split->to_json() : json(nullptr), rc.seed});
  write_json_file(rc.out_dir / "config.json", to_json(rc));
  out << "saved " << (rc.out_dir / "checkpoint.bin").string() << '\n';
  return kExitOk;
}

int cmd_eval(const Args& a, std::ostream& out) {
  const RunConfig rc = resolve(a.common);
  require_file(a.data, "--data");
  if (a.checkpoint.empty() == a.detections.empty())
    throw ValidationError("eval needs exactly one of --checkpoint and --detections");
  if (!a.checkpoint.empty()) require_file(a.checkpoint, "--checkpoint");
  if (!a.detections.empty()) require_file(a.detections, "--detections");
  auto split = load_split(a.split);
  if (a.common.dry_run) {
    print_dry_run(out, "eval", rc);
    return kExitOk;
  }
  std::vector<Detection> dets;
  std::optional<LabelSpace> space;
  std::size_t image_size = rc.model.image_size;
  LoadedCheckpoint ck;
  if (!a.checkpoint.empty()) {
    ck = load_checkpoint(a.checkpoint);
    space = ck.model->space();
    image_size = ck.model->config().image_size;
    if (!split && !ck.meta.split.is_null()) split = SplitSpec::from_json(ck.meta.split);
  } else {
    space = resolve_space(rc, a.label_space, a.data);
  }
  // Detections files need no pixels; skip reading the images.
  const Dataset data = a.checkpoint.empty()
                           ? load_annotations(fs::path(a.data) / "annotations.json", {}, image_size)
                           : load_data_dir(a.data, image_size);
  if (ck.model) {
    dets = ck.model->detect_all(data);
  } else {
    dets = read_detections_jsonl(a.detections, *space);
  }
  const EvalReport r = evaluate(dets, ground_truth_from(data, *space), *space, split ? &*split : nullptr);
  out << format_report(r);
  fs::create_directories(rc.out_dir);
  write_json_file(rc.out_dir / "report.json", to_json(r));
  if (ck.model) write_detections_jsonl(rc.out_dir / "detections.jsonl", dets);
  return kExitOk;
}

int cmd_infer(const Args& a, std::ostream& out) {
  RunConfig rc = resolve(a.common);
  require_file(a.checkpoint, "--checkpoint");
  require_file(a.image, "--image");
  if (a.common.dry_run) {
    print_dry_run(out, "infer", rc);
    return kExitOk;
  }
  LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  if (a.top_k) {
    ModelConfig mc = ck.model->config();
    mc.top_k = *a.top_k;
    auto resized = std::make_unique<HoiModel>(mc, ck.model->space());
    // top_k only affects post-processing, so the weights carry over by name.
    for (const auto& e : ck.model->store().entries())
      resized->store().get(e.name).mutable_value() = e.var.value();
    ck.model = std::move(resized);
  }
  const Image img = read_ppm(a.image);
  const std::string id = fs::path(a.image).stem().string();
  const ImageFeatures f = ck.model->features(img);
  const auto dets = ck.model->detect({&f}, {id}).front();
  const fs::path path = a.output.empty() ? rc.out_dir / (id + ".detections.jsonl") : fs::path(a.output);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_detections_jsonl(path, dets);
  const auto& space = ck.model->space();
  for (std::size_t i = 0; i < std::min<std::size_t>(dets.size(), 10); ++i) {
    const auto& d = dets[i];
    const auto [v, o] = space.hoi(d.hoi_id);
    out << std::fixed << std::setprecision(4) << d.score << "  " << space.verbs()[v] << ' ' << space.objects()[o]
        << "  h[" << d.h_box.x1 << ' ' << d.h_box.y1 << ' ' << d.h_box.x2 << ' ' << d.h_box.y2 << "] o["
        << d.o_box.x1 << ' ' << d.o_box.y1 << ' ' << d.o_box.x2 << ' ' << d.o_box.y2 << "]\n";
  }
  out << dets.size() << " detections written to " << path.string() << '\n';
  return kExitOk;
}

int cmd_export_attention(const Args& a, std::ostream& out) {
  const RunConfig rc = resolve(a.common);
  require_file(a.checkpoint, "--checkpoint");
  require_file(a.image, "--image");
  if (a.common.dry_run) {
    print_dry_run(out, "export-attention", rc);
    return kExitOk;
  }
  LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  HoiModel& model = *ck.model;
  const ImageFeatures f = model.features(read_ppm(a.image));
  ForwardTrace trace;
  ForwardOutput fo;
  {
    ag::NoGradGuard guard;
    fo = model.forward({&f}, false, &trace);
  }
  const fs::path dir = rc.out_dir / "attention";
  fs::create_directories(dir);

  // The query whose best HOI score is highest is the one a reader wants to see.
  const std::size_t n = model.config().queries;
  const Matrix probs = softmax(fo.pred.object_logits.value());
  std::vector<double> s_h(n);
  for (std::size_t q = 0; q < n; ++q) s_h[q] = 1.0 / (1.0 + std::exp(-fo.pred.human_logit.value()(q, 0)));
  const Matrix scores = final_scores(s_h, probs, fo.pred.verb_logits.value(), model.space(), model.config().fusion);
  std::size_t best = 0;
  double best_score = -1e300;
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t h = 0; h < scores.cols(); ++h)
      if (scores(q, h) > best_score) best_score = scores(q, h), best = q;

  const std::size_t roi = model.config().roi;
  std::size_t files = 0;
  for (std::size_t l = 0; l < trace.verb_cross.size(); ++l, files += 2)
    export_matrix(dir, "verb_layer" + std::to_string(l), trace.verb_cross[l]);
  for (std::size_t l = 0; l < trace.interaction.spatial.size(); ++l) {
    export_matrix(dir, "interaction_spatial_layer" + std::to_string(l), trace.interaction.spatial[l]);
    export_matrix(dir, "interaction_global_layer" + std::to_string(l), trace.interaction.global[l]);
    export_row_as_grid(dir, "interaction_spatial_layer" + std::to_string(l) + "_best", trace.interaction.spatial[l],
                       best, f.clip.grid_h, f.clip.grid_w);
    export_row_as_grid(dir, "interaction_global_layer" + std::to_string(l) + "_best", trace.interaction.global[l],
                       best, roi, roi);
    files += 8;
  }
  write_json_file(dir / "index.json",
                  json{{"best_query", best},
                       {"best_score", best_score},
                       {"verbs", model.space().verbs()},
                       {"verb_layers", trace.verb_cross.size()},
                       {"interaction_layers", trace.interaction.spatial.size()},
                       {"spatial_grid", {f.clip.grid_h, f.clip.grid_w}},
                       {"global_grid", {roi, roi}}});
  out << "wrote " << files + 1 << " attention files to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_ablate(const Args& a, std::ostream& out) {
  RunConfig rc = resolve(a.common);
  if (a.epochs) rc.train.epochs = *a.epochs;
  if (a.lr_drop) rc.train.lr_drop = *a.lr_drop;
  if (a.lr) rc.train.lr = *a.lr;
  rc.validate();
  const AblationAxis axis = parse_ablation_axis(a.axis);
  if (a.n_train == 0) throw ValidationError("--n-train must be positive");
  if (a.common.dry_run) {
    print_dry_run(out, "ablate", rc);
    return kExitOk;
  }
  const SyntheticBenchmark bench = make_synthetic_benchmark(rc, a.n_train, a.n_test == 0 ? a.n_train : a.n_test);
  const auto rows = run_ablation(rc, axis, bench);
  const std::string table = format_ablation(axis, rows);
  out << table;
  fs::create_directories(rc.out_dir);
  std::ofstream(rc.out_dir / ("ablation_" + a.axis + ".txt")) << table;
  json doc = json::array();
  for (const auto& r : rows)
    doc.push_back({{"setting", r.label},
                   {"final_loss", r.finite ? json(r.final_loss) : json(nullptr)},
                   {"finite", r.finite},
                   {"report", to_json(r.report)}});
  write_json_file(rc.out_dir / ("ablation_" + a.axis + ".json"), doc);
  return kExitOk;
}

void error_line(std::ostream& err, const char* kind, int code, const std::string& message) {
  err << json{{"error", kind}, {"code", code}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Zero-shot human-object interaction detection at desk scale", "zhoi"};
  app.require_subcommand(1);
  Args a;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic relation x colour dataset");
  add_common(synth, a.common);
  synth->add_option("--n", a.n_images, "Training images");
  synth->add_option("--n-test", a.n_test, "Test images drawn from every HOI");

  auto* split = app.add_subcommand("split", "Make a zero-shot split of a label space");
  add_common(split, a.common);
  split->add_option("--setting", a.setting, "FULL, UC, RF_UC, NF_UC, UO or UV");
  split->add_option("--n", a.n, "Unseen HOIs (UC family), objects (UO) or verbs (UV)");
  split->add_option("--label-space", a.label_space, "Label space JSON (default: synthetic)");
  split->add_option("--output", a.output, "Write the split JSON here instead of stdout");

  auto* train = app.add_subcommand("train", "Train a model on an annotation directory");
  add_common(train, a.common);
  train->add_option("--data", a.data, "Directory with annotations.json and images/")->required();
  train->add_option("--label-space", a.label_space, "Label space JSON");
  train->add_option("--split", a.split, "Split JSON; unseen labels are dropped from training");
  train->add_option("--epochs", a.epochs, "Override train.epochs");
  train->add_option("--lr-drop", a.lr_drop, "Override train.lr_drop (epoch index of the 0.1 decay)");
  train->add_option("--fraction", a.fraction, "Override train.train_fraction");
  train->add_option("--lr", a.lr, "Override train.lr");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or a detections file");
  add_common(eval, a.common);
  eval->add_option("--data", a.data, "Directory with annotations.json (and images/ for --checkpoint)")->required();
  eval->add_option("--checkpoint", a.checkpoint, "Model checkpoint");
  eval->add_option("--detections", a.detections, "Detections JSONL instead of a model");
  eval->add_option("--label-space", a.label_space, "Label space JSON (with --detections)");
  eval->add_option("--split", a.split, "Split JSON for the Seen / Unseen columns");

  auto* infer = app.add_subcommand("infer", "Detect HOIs in one image");
  add_common(infer, a.common);
  infer->add_option("--checkpoint", a.checkpoint, "Model checkpoint")->required();
  infer->add_option("--image", a.image, "PPM image")->required();
  infer->add_option("--top-k", a.top_k, "Detections kept");
  infer->add_option("--output", a.output, "Detections JSONL path");

  auto* attn = app.add_subcommand("export-attention", "Write verb and interaction decoder attention maps");
  add_common(attn, a.common);
  attn->add_option("--checkpoint", a.checkpoint, "Model checkpoint")->required();
  attn->add_option("--image", a.image, "PPM image")->required();

  auto* ablate = app.add_subcommand("ablate", "Sweep reconstruction loss or verb decoder depth");
  add_common(ablate, a.common);
  ablate->add_option("--axis", a.axis, "recon or verb-layers")->required();
  ablate->add_option("--n-train", a.n_train, "Synthetic training images");
  ablate->add_option("--n-test", a.n_test, "Synthetic test images (default: n-train)");
  ablate->add_option("--epochs", a.epochs, "Override train.epochs");
  ablate->add_option("--lr-drop", a.lr_drop, "Override train.lr_drop");
  ablate->add_option("--lr", a.lr, "Override train.lr");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    error_line(err, "validation", kExitValidation, e.what());
    return kExitValidation;
  }

  try {
    if (synth->parsed()) return cmd_synth(a, out);
    if (split->parsed()) return cmd_split(a, out);
    if (train->parsed()) return cmd_train(a, out);
    if (eval->parsed()) return cmd_eval(a, out);
    if (infer->parsed()) return cmd_infer(a, out);
    if (attn->parsed()) return cmd_export_attention(a, out);
    if (ablate->parsed()) return cmd_ablate(a, out);
  } catch (const ValidationError& e) {
    error_line(err, "validation", kExitValidation, e.what());
    return kExitValidation;
  } catch (const json::exception& e) {
    error_line(err, "validation", kExitValidation, e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    error_line(err, "runtime", kExitRuntime, e.what());
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace zhoi
