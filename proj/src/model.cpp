#include "zhoi/model.hpp"

#include <algorithm>
#include <cmath>

#include "zhoi/errors.hpp"

namespace zhoi {

namespace {

TextEmbedderConfig text_config(const ModelConfig& c) {
  TextEmbedderConfig t;
  t.mode = c.text_mode;
  t.dim = c.clip_dim;
  t.seed = c.text_seed;
  t.noise_norm = c.text_noise;
  t.external_dir = c.text_dir;
  return t;
}

ClassifierWeights make_text_weights(const ModelConfig& c, const LabelSpace& space) {
  auto embedder = make_text_embedder(text_config(c), space.verbs(), space.objects());
  if (embedder->dim() != c.clip_dim) throw ValidationError("model: text embedding dim != clip_dim");
  return build_classifier_weights(space, *embedder);
}

const ModelConfig& checked(const ModelConfig& c) {
  c.validate();
  return c;
}

}  // namespace

HoiModel::HoiModel(ModelConfig cfg, LabelSpace space)
    : cfg_(checked(cfg)),
      space_(std::move(space)),
      backbone_(BackboneConfig{cfg_.backbone_channels, 8, 2, cfg_.backbone_seed, 1.0}),
      clip_(ClipVisualConfig{cfg_.clip_dim, cfg_.clip_patch, 4, cfg_.clip_seed}),
      text_(make_text_weights(cfg_, space_)),
      store_(cfg_.init_seed) {
  if (cfg_.train_text_weights) {
    w_verbs_ = store_.add_parameter("text.verbs", text_.verbs);
    w_objects_ = store_.add_parameter("text.objects", text_.objects);
  } else {
    w_verbs_ = store_.add_buffer("text.verbs", text_.verbs);
    w_objects_ = store_.add_buffer("text.objects", text_.objects);
  }
  encoder_ = HoPairEncoder(store_, "encoder",
                           HoPairEncoderConfig{cfg_.backbone_channels, cfg_.dim, 2 * cfg_.dim, cfg_.roi, 2});
  instance_ = InstanceDecoder(store_, "instance",
                              InstanceDecoderConfig{cfg_.dim, cfg_.heads, cfg_.ffn, cfg_.decoder_layers,
                                                    cfg_.queries, cfg_.clip_dim});
  heads_ = InstanceHeads(store_, "heads", cfg_.dim, cfg_.clip_dim, cfg_.logit_scale);
  verb_decoder_ = VerbDecoder(store_, "verb",
                              VerbDecoderConfig{cfg_.dim, cfg_.heads, cfg_.ffn, cfg_.verb_layers, space_.num_verbs(),
                                                cfg_.verb_query_self_attention});
  interaction_ = InteractionDecoder(
      store_, "interaction",
      InteractionDecoderConfig{cfg_.dim, cfg_.heads, cfg_.ffn, cfg_.decoder_layers, cfg_.clip_dim});
  verb_predictor_ = VerbPredictor(store_, "verb_predictor", cfg_.dim, cfg_.clip_dim, cfg_.logit_scale);
  pos_g_ = nn::sine_position_2d(cfg_.roi, cfg_.roi, cfg_.dim);
}

ImageFeatures HoiModel::features(const Image& image) const {
  if (image.height != cfg_.image_size || image.width != cfg_.image_size) {
    return features(resize_nearest(image, cfg_.image_size, cfg_.image_size));
  }
  return {backbone_(image), clip_(image)};
}

ForwardOutput HoiModel::forward(const std::vector<const ImageFeatures*>& batch, bool training,
                                ForwardTrace* trace) {
  const std::size_t b = batch.size();
  if (b == 0) throw ValidationError("forward: empty batch");

  std::vector<FeatureGrid> grids;
  grids.reserve(b);
  for (const auto* f : batch) grids.push_back(f->grid);
  DecoderMemory v_g;
  v_g.per_image = encoder_.tokens_per_crop();
  v_g.tokens = encoder_(grids, {}, training, trace ? &trace->additive_alpha : nullptr);
  v_g.positions = tile(pos_g_, b);

  const auto& first = batch.front()->clip;
  const std::size_t l_sp = first.tokens.rows();
  if (pos_sp_.rows() != l_sp) pos_sp_ = nn::sine_position_2d(first.grid_h, first.grid_w, cfg_.dim);
  Matrix sp(b * l_sp, cfg_.clip_dim);
  ForwardOutput out;
  out.spatial_mean = Matrix(b, cfg_.clip_dim);
  for (std::size_t i = 0; i < b; ++i) {
    const Matrix& t = batch[i]->clip.tokens;
    if (t.rows() != l_sp) throw ValidationError("forward: images in a batch must share the token grid");
    std::copy(t.storage().begin(), t.storage().end(), sp.row(i * l_sp).begin());
    for (std::size_t r = 0; r < l_sp; ++r)
      for (std::size_t c = 0; c < cfg_.clip_dim; ++c) out.spatial_mean(i, c) += t(r, c) / static_cast<double>(l_sp);
  }
  DecoderMemory v_sp;
  v_sp.per_image = l_sp;
  v_sp.tokens = ag::constant(std::move(sp));
  v_sp.positions = tile(pos_sp_, b);

  const auto inst = instance_(v_g, v_sp, b);
  const InstanceOutputs heads = heads_(inst.q_h, inst.q_o, w_objects_);
  const Var v_verb = verb_decoder_(v_g, b, trace ? &trace->verb_cross : nullptr);
  const Var q_inter = form_interaction_queries(inst.q_h, inst.q_o, instance_.position_embedding());
  const Var q_final = interaction_(q_inter, v_sp, v_g, b, trace ? &trace->interaction : nullptr);
  const VerbScoreOutputs verbs = verb_predictor_(q_final, v_verb, w_verbs_, b);

  out.pred.boxes_h = heads.boxes_h;
  out.pred.boxes_o = heads.boxes_o;
  out.pred.object_logits = heads.object_logits;
  out.pred.human_logit = heads.human_logit;
  out.pred.verb_logits = verbs.logits;
  out.pred.q_proj = verbs.q_proj;
  out.pred.batch = b;
  return out;
}

std::vector<std::vector<Detection>> HoiModel::detect(const std::vector<const ImageFeatures*>& batch,
                                                     const std::vector<std::string>& image_ids) {
  if (image_ids.size() != batch.size()) throw ValidationError("detect: one id per image required");
  ag::NoGradGuard guard;
  const ForwardOutput f = forward(batch, false);
  const std::size_t n = cfg_.queries;
  const Matrix probs = softmax(f.pred.object_logits.value());
  const Matrix& hl = f.pred.human_logit.value();
  const Matrix& verbs = f.pred.verb_logits.value();

  std::vector<std::vector<Detection>> out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto rows = [&](const Matrix& m) {
      Matrix r(n, m.cols());
      std::copy(m.row(i * n).begin(), m.row(i * n).begin() + static_cast<std::ptrdiff_t>(n * m.cols()),
                r.storage().begin());
      return r;
    };
    std::vector<double> s_h(n);
    for (std::size_t q = 0; q < n; ++q) s_h[q] = 1.0 / (1.0 + std::exp(-hl(i * n + q, 0)));
    const Matrix scores = final_scores(s_h, rows(probs), rows(verbs), space_, cfg_.fusion);
    out.push_back(assemble_detections(image_ids[i], rows(f.pred.boxes_h.value()), rows(f.pred.boxes_o.value()),
                                      scores, space_, cfg_.top_k));
  }
  return out;
}

std::vector<Detection> HoiModel::detect_all(const Dataset& data, std::size_t batch_size) {
  std::vector<Detection> all;
  batch_size = std::max<std::size_t>(batch_size, 1);
  for (std::size_t start = 0; start < data.samples.size(); start += batch_size) {
    const std::size_t end = std::min(data.samples.size(), start + batch_size);
    std::vector<ImageFeatures> feats;
    std::vector<std::string> ids;
    for (std::size_t i = start; i < end; ++i) {
      feats.push_back(features(data.samples[i].image));
      ids.push_back(data.samples[i].id);
    }
    std::vector<const ImageFeatures*> ptrs;
    for (const auto& f : feats) ptrs.push_back(&f);
    for (auto& d : detect(ptrs, ids)) all.insert(all.end(), d.begin(), d.end());
  }
  return all;
}

GroundTruth training_targets(const Sample& sample) {
  GroundTruth gt;
  for (const auto& p : sample.pairs) {
    const auto hc = geometry::to_center(p.human);
    const auto oc = geometry::to_center(p.object);
    auto same = [&](const GtPair& g) {
      return g.object_id == p.object_id && g.human.cx == hc.cx && g.human.cy == hc.cy && g.human.w == hc.w &&
             g.human.h == hc.h && g.object.cx == oc.cx && g.object.cy == oc.cy && g.object.w == oc.w &&
             g.object.h == oc.h;
    };
    auto it = std::find_if(gt.begin(), gt.end(), same);
    if (it == gt.end()) {
      gt.push_back(GtPair{hc, oc, p.object_id, {}});
      it = gt.end() - 1;
    }
    for (auto v : p.verb_ids)
      if (std::find(it->verbs.begin(), it->verbs.end(), v) == it->verbs.end()) it->verbs.push_back(v);
    std::sort(it->verbs.begin(), it->verbs.end());
  }
  return gt;
}

}  // namespace zhoi
