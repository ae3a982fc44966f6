#include "zhoi/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <functional>
#include <map>

#include "zhoi/errors.hpp"

extern char** environ;

namespace zhoi {

using nlohmann::json;

namespace {

// Visits every key of an object through a handler table; unknown keys fail.
void read_object(const json& j, const std::string& where,
                 const std::map<std::string, std::function<void(const json&)>>& handlers) {
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    auto it = handlers.find(key);
    if (it == handlers.end()) throw ValidationError(where + ": unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ValidationError(where + "." + key + ": " + e.what());
    }
  }
}

template <class T>
std::function<void(const json&)> into(T& field) {
  return [&field](const json& v) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ValidationError("expected a boolean");
    } else if constexpr (std::is_arithmetic_v<T>) {
      if (!v.is_number()) throw ValidationError("expected a number");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_float() || (!v.is_number_unsigned() && v.get<long long>() < 0)) {
          throw ValidationError("expected a non-negative integer");
        }
      }
    }
    field = v.get<T>();
  };
}

std::function<void(const json&)> into_path(std::filesystem::path& p) {
  return [&p](const json& v) { p = v.get<std::string>(); };
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

}  // namespace

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.dim = 64;
  c.queries = 64;
  c.heads = 4;
  c.ffn = 128;
  c.clip_dim = 64;
  c.backbone_channels = 32;
  c.clip_patch = 16;
  return c;
}

void ModelConfig::validate() const {
  require(dim > 0 && queries > 0 && heads > 0 && ffn > 0 && clip_dim > 0, "model: dimensions must be positive");
  require(dim % heads == 0, "model: dim must be divisible by heads");
  require(decoder_layers >= 1 && verb_layers >= 1, "model: layer counts must be >= 1");
  require(image_size >= 16 && backbone_channels > 0 && clip_patch > 0 && roi > 0, "model: bad image geometry");
  require(logit_scale > 0, "model: logit_scale must be positive");
  require(top_k > 0, "model: top_k must be positive");
  require(loss.box >= 0 && loss.giou >= 0 && loss.object >= 0 && loss.verb >= 0 && loss.recon >= 0 && loss.eos >= 0,
          "model: loss weights must be non-negative");
  require(text_mode != TextMode::External || !text_dir.empty(), "model: external text mode needs text_dir");
}

void TrainConfig::validate() const {
  require(lr >= 0 && weight_decay >= 0 && clip_grad_norm >= 0, "train: lr, weight_decay, clip must be >= 0");
  require(epochs >= 1, "train: epochs must be >= 1");
  require(lr_drop < epochs, "train: lr_drop must be < epochs");
  require(batch_size >= 1, "train: batch_size must be >= 1");
  require(train_fraction > 0 && train_fraction <= 1, "train: train_fraction must be in (0, 1]");
}

void SceneConfig::validate() const {
  require(image_size >= 16, "scene: image_size must be >= 16");
  require(!relations.empty() && !colors.empty(), "scene: need relations and colors");
  require(pairs_per_image >= 1, "scene: pairs_per_image must be >= 1");
  require(noise >= 0 && noise < 0.2, "scene: noise must be in [0, 0.2)");
  require(min_size > 0 && min_size <= max_size && max_size < 0.5, "scene: need 0 < min_size <= max_size < 0.5");
  require(gap >= 0 && overlap > 0 && overlap <= 1, "scene: bad gap/overlap");
  require(long_tail >= 0, "scene: long_tail must be >= 0");
  require(max_retries >= 1, "scene: max_retries must be >= 1");
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  scene.validate();
  require(model.image_size == scene.image_size, "model.image_size must equal scene.image_size");
}

json to_json(const ModelConfig& c) {
  return json{{"dim", c.dim},
              {"queries", c.queries},
              {"heads", c.heads},
              {"ffn", c.ffn},
              {"decoder_layers", c.decoder_layers},
              {"verb_layers", c.verb_layers},
              {"verb_query_self_attention", c.verb_query_self_attention},
              {"clip_dim", c.clip_dim},
              {"clip_patch", c.clip_patch},
              {"backbone_channels", c.backbone_channels},
              {"image_size", c.image_size},
              {"roi", c.roi},
              {"logit_scale", c.logit_scale},
              {"text_mode", std::string(to_string(c.text_mode))},
              {"text_noise", c.text_noise},
              {"text_dir", c.text_dir.string()},
              {"train_text_weights", c.train_text_weights},
              {"backbone_seed", c.backbone_seed},
              {"clip_seed", c.clip_seed},
              {"text_seed", c.text_seed},
              {"init_seed", c.init_seed},
              {"loss",
               {{"box", c.loss.box},
                {"giou", c.loss.giou},
                {"object", c.loss.object},
                {"verb", c.loss.verb},
                {"recon", c.loss.recon},
                {"eos", c.loss.eos},
                {"focal_alpha", c.loss.focal_alpha},
                {"focal_gamma", c.loss.focal_gamma}}},
              {"recon", std::string(to_string(c.recon))},
              {"fusion", std::string(to_string(c.fusion))},
              {"top_k", c.top_k}};
}

void from_json(const json& j, ModelConfig& c) {
  read_object(j, "model",
              {{"dim", into(c.dim)},
               {"queries", into(c.queries)},
               {"heads", into(c.heads)},
               {"ffn", into(c.ffn)},
               {"decoder_layers", into(c.decoder_layers)},
               {"verb_layers", into(c.verb_layers)},
               {"verb_query_self_attention", into(c.verb_query_self_attention)},
               {"clip_dim", into(c.clip_dim)},
               {"clip_patch", into(c.clip_patch)},
               {"backbone_channels", into(c.backbone_channels)},
               {"image_size", into(c.image_size)},
               {"roi", into(c.roi)},
               {"logit_scale", into(c.logit_scale)},
               {"text_mode", [&](const json& v) { c.text_mode = parse_text_mode(v.get<std::string>()); }},
               {"text_noise", into(c.text_noise)},
               {"text_dir", into_path(c.text_dir)},
               {"train_text_weights", into(c.train_text_weights)},
               {"backbone_seed", into(c.backbone_seed)},
               {"clip_seed", into(c.clip_seed)},
               {"text_seed", into(c.text_seed)},
               {"init_seed", into(c.init_seed)},
               {"loss",
                [&](const json& v) {
                  read_object(v, "model.loss",
                              {{"box", into(c.loss.box)},
                               {"giou", into(c.loss.giou)},
                               {"object", into(c.loss.object)},
                               {"verb", into(c.loss.verb)},
                               {"recon", into(c.loss.recon)},
                               {"eos", into(c.loss.eos)},
                               {"focal_alpha", into(c.loss.focal_alpha)},
                               {"focal_gamma", into(c.loss.focal_gamma)}});
                }},
               {"recon", [&](const json& v) { c.recon = parse_recon_loss(v.get<std::string>()); }},
               {"fusion", [&](const json& v) { c.fusion = parse_fusion(v.get<std::string>()); }},
               {"top_k", into(c.top_k)}});
}

json to_json(const TrainConfig& c) {
  return json{{"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"clip_grad_norm", c.clip_grad_norm},
              {"epochs", c.epochs},
              {"lr_drop", c.lr_drop},
              {"batch_size", c.batch_size},
              {"train_fraction", c.train_fraction},
              {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  read_object(j, "train",
              {{"lr", into(c.lr)},
               {"weight_decay", into(c.weight_decay)},
               {"clip_grad_norm", into(c.clip_grad_norm)},
               {"epochs", into(c.epochs)},
               {"lr_drop", into(c.lr_drop)},
               {"batch_size", into(c.batch_size)},
               {"train_fraction", into(c.train_fraction)},
               {"seed", into(c.seed)}});
}

json to_json(const SceneConfig& c) {
  return json{{"image_size", c.image_size}, {"relations", c.relations}, {"colors", c.colors},
              {"pairs_per_image", c.pairs_per_image}, {"noise", c.noise}, {"min_size", c.min_size},
              {"max_size", c.max_size}, {"gap", c.gap}, {"overlap", c.overlap}, {"long_tail", c.long_tail},
              {"max_retries", c.max_retries}};
}

void from_json(const json& j, SceneConfig& c) {
  read_object(j, "scene",
              {{"image_size", into(c.image_size)},
               {"relations", into(c.relations)},
               {"colors", into(c.colors)},
               {"pairs_per_image", into(c.pairs_per_image)},
               {"noise", into(c.noise)},
               {"min_size", into(c.min_size)},
               {"max_size", into(c.max_size)},
               {"gap", into(c.gap)},
               {"overlap", into(c.overlap)},
               {"long_tail", into(c.long_tail)},
               {"max_retries", into(c.max_retries)}});
}

json to_json(const RunConfig& c) {
  return json{{"model", to_json(c.model)},
              {"train", to_json(c.train)},
              {"scene", to_json(c.scene)},
              {"split",
               {{"setting", std::string(to_string(c.split.setting))},
                {"n_unseen_hoi", c.split.params.n_unseen_hoi},
                {"n_unseen_object", c.split.params.n_unseen_object},
                {"n_unseen_verb", c.split.params.n_unseen_verb},
                {"use_protocol_sets", c.split.params.use_protocol_sets}}},
              {"seed", c.seed},
              {"label_space", c.label_space.string()},
              {"data_dir", c.data_dir.string()},
              {"out_dir", c.out_dir.string()}};
}

void from_json(const json& j, RunConfig& c) {
  read_object(j, "config",
              {{"model", [&](const json& v) { from_json(v, c.model); }},
               {"train", [&](const json& v) { from_json(v, c.train); }},
               {"scene", [&](const json& v) { from_json(v, c.scene); }},
               {"split",
                [&](const json& v) {
                  read_object(v, "split",
                              {{"setting", [&](const json& s) { c.split.setting = parse_setting(s.get<std::string>()); }},
                               {"n_unseen_hoi", into(c.split.params.n_unseen_hoi)},
                               {"n_unseen_object", into(c.split.params.n_unseen_object)},
                               {"n_unseen_verb", into(c.split.params.n_unseen_verb)},
                               {"use_protocol_sets", into(c.split.params.use_protocol_sets)}});
                }},
               {"seed", into(c.seed)},
               {"label_space", into_path(c.label_space)},
               {"data_dir", into_path(c.data_dir)},
               {"out_dir", into_path(c.out_dir)}});
}

std::vector<std::string> apply_env_overrides(json& doc, const std::string& prefix) {
  static const std::vector<std::string> sections{"MODEL_LOSS", "MODEL", "TRAIN", "SCENE", "SPLIT"};
  std::vector<std::string> applied;
  std::vector<std::string> vars;
  for (char** e = environ; e && *e; ++e) {
    const std::string kv(*e);
    if (kv.rfind(prefix, 0) == 0) vars.push_back(kv);
  }
  std::sort(vars.begin(), vars.end());
  for (const auto& kv : vars) {
    const auto eq = kv.find('=');
    const std::string name = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    std::string rest = name.substr(prefix.size());
    std::vector<std::string> path;
    for (const auto& s : sections) {
      if (rest.rfind(s + "_", 0) == 0) {
        std::string lower = s;
        std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (lower == "model_loss") {
          path = {"model", "loss"};
        } else {
          path = {lower};
        }
        rest = rest.substr(s.size() + 1);
        break;
      }
    }
    std::transform(rest.begin(), rest.end(), rest.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (rest.empty()) continue;
    path.push_back(rest);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    json* node = &doc;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      if (!node->contains(path[i])) (*node)[path[i]] = json::object();
      node = &(*node)[path[i]];
    }
    (*node)[path.back()] = value;
    applied.push_back(name);
  }
  return applied;
}

}  // namespace zhoi
