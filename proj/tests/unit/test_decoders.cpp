#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "zhoi/errors.hpp"
#include "zhoi/instance_interactor.hpp"
#include "zhoi/interaction_semantics.hpp"
#include "zhoi/verb_learning.hpp"

using namespace zhoi;
using zhoi::testing::gradcheck;
using zhoi::testing::random_matrix;

namespace {

DecoderMemory memory(std::size_t batch, std::size_t per, std::size_t dim, std::size_t pos_dim, Rng& rng,
                     bool trainable = false) {
  DecoderMemory m;
  m.per_image = per;
  m.tokens = trainable ? ag::leaf(random_matrix(batch * per, dim, rng)) : ag::constant(random_matrix(batch * per, dim, rng));
  m.positions = random_matrix(batch * per, pos_dim, rng, 0.5);
  return m;
}

std::vector<std::pair<std::string, Var>> trainables(nn::ParameterStore& s, const std::string& prefix = "") {
  std::vector<std::pair<std::string, Var>> out;
  for (auto& e : s.entries())
    if (e.trainable && e.name.rfind(prefix, 0) == 0) out.emplace_back(e.name, e.var);
  return out;
}

void check_rows_stochastic(const Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0;
    for (double v : m.row(r)) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

Matrix rows_of(const Matrix& m, std::size_t start, std::size_t count) {
  Matrix r(count, m.cols());
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) r(i, j) = m(start + i, j);
  return r;
}

}  // namespace

TEST_CASE("instance decoder with zeroed layers returns its queries") {
  nn::ParameterStore store(1);
  InstanceDecoder dec(store, "inst", InstanceDecoderConfig{8, 2, 16, 3, 5, 6});
  store.fill("inst.layer", 0.0);
  Rng rng(2);
  const auto g = memory(2, 9, 8, 8, rng);
  const auto sp = memory(2, 4, 6, 8, rng);
  const auto out = dec(g, sp, 2);
  REQUIRE(out.q_h.rows() == 10);
  REQUIRE(out.q_h.cols() == 8);
  for (std::size_t b = 0; b < 2; ++b) {
    CHECK(rows_of(out.q_h.value(), b * 5, 5) == dec.human_queries().value());
    CHECK(rows_of(out.q_o.value(), b * 5, 5) == dec.object_queries().value());
  }
}

TEST_CASE("instance decoder gradients match finite differences") {
  nn::ParameterStore store(3);
  InstanceDecoder dec(store, "inst", InstanceDecoderConfig{4, 2, 6, 2, 3, 5});
  Rng rng(4);
  const auto g = memory(2, 4, 4, 4, rng, true);
  const auto sp = memory(2, 3, 5, 4, rng, true);
  const Matrix wh = random_matrix(6, 4, rng), wo = random_matrix(6, 4, rng);
  auto f = [&] {
    const auto o = dec(g, sp, 2);
    return ag::add(ag::sum(ag::mul(o.q_h, ag::constant(wh))), ag::sum(ag::mul(o.q_o, ag::constant(wo))));
  };
  auto inputs = trainables(store);
  inputs.emplace_back("v_g", g.tokens);
  inputs.emplace_back("v_sp", sp.tokens);
  auto r = gradcheck(f, inputs, 1e-5, 12);
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("instance heads: box bounds, softmax rows and cosine logits") {
  nn::ParameterStore store(5);
  InstanceHeads heads(store, "heads", 4, 3, 20.0);
  Rng rng(6);
  const Var q_h = ag::constant(random_matrix(7, 4, rng, 3.0));
  const Var q_o = ag::constant(random_matrix(7, 4, rng, 3.0));
  Matrix w = random_matrix(2, 3, rng);
  for (std::size_t r = 0; r < 2; ++r) {
    double n = 0;
    for (double v : w.row(r)) n += v * v;
    for (double& v : w.row(r)) v /= std::sqrt(n);
  }
  const auto out = heads(q_h, q_o, ag::constant(w));
  for (double v : out.boxes_h.value().storage()) CHECK((v > 0.0 && v < 1.0));
  for (double v : out.boxes_o.value().storage()) CHECK((v > 0.0 && v < 1.0));
  check_rows_stochastic(softmax(out.object_logits.value()));

  // Hand algebra: logit[n, c] = 20 * <e_n, w_c> / |e_n| with e = obj_proj(LN(q_o)).
  const Matrix& gw = store.get("heads.norm_o.gamma").value();
  const Matrix& pw = store.get("heads.obj_proj.weight").value();
  const Matrix& pb = store.get("heads.obj_proj.bias").value();
  for (std::size_t n = 0; n < 7; ++n) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 4; ++j) mu += q_o.value()(n, j) / 4;
    for (std::size_t j = 0; j < 4; ++j) var += std::pow(q_o.value()(n, j) - mu, 2) / 4;
    std::vector<double> ln(4), e(3);
    for (std::size_t j = 0; j < 4; ++j) ln[j] = gw[j] * (q_o.value()(n, j) - mu) / std::sqrt(var + 1e-5);
    double norm = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      e[c] = pb[c];
      for (std::size_t j = 0; j < 4; ++j) e[c] += ln[j] * pw(j, c);
      norm += e[c] * e[c];
    }
    for (std::size_t k = 0; k < 2; ++k) {
      double dot = 0;
      for (std::size_t c = 0; c < 3; ++c) dot += e[c] * w(k, c);
      CHECK(std::abs(out.object_logits.value()(n, k) - 20.0 * dot / std::sqrt(norm)) < 1e-6);
    }
  }
}

TEST_CASE("background-dominated logits give low object confidence") {
  Matrix logits(2, 3, -5.0);
  logits(0, 2) = 5.0;
  logits(1, 2) = 5.0;
  for (double s : object_confidence(softmax(logits))) CHECK(s < 0.5);
}

TEST_CASE("interaction queries: identity, symmetry and formula") {
  Rng rng(7);
  const Matrix q = random_matrix(6, 4, rng);
  Matrix neg = q;
  for (double& v : neg.storage()) v = -v;
  const Var zero = ag::constant(Matrix(3, 4));
  CHECK(form_interaction_queries(ag::constant(q), ag::constant(q), zero).value() == q);
  CHECK(form_interaction_queries(ag::constant(q), ag::constant(neg), zero).value() == Matrix(6, 4));

  const Matrix h = random_matrix(6, 4, rng), o = random_matrix(6, 4, rng), p = random_matrix(3, 4, rng);
  const Matrix out = form_interaction_queries(ag::constant(h), ag::constant(o), ag::constant(p)).value();
  for (std::size_t n = 0; n < 6; ++n)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(out(n, j) == doctest::Approx(((h(n, j) + p(n % 3, j)) + (o(n, j) + p(n % 3, j))) / 2).epsilon(1e-15));
}

TEST_CASE("verb decoder: zeroed layers, attention rows and gradients") {
  for (std::size_t layers : {1u, 2u, 3u}) {
    nn::ParameterStore store(8);
    VerbDecoder dec(store, "verb", VerbDecoderConfig{8, 2, 12, layers, 5, false});
    Rng rng(9);
    const auto g = memory(2, 6, 8, 8, rng);
    std::vector<Matrix> maps;
    const Var out = dec(g, 2, &maps);
    CHECK(out.rows() == 10);
    REQUIRE(maps.size() == layers);
    for (const auto& m : maps) check_rows_stochastic(m);

    store.fill("verb.layer", 0.0);
    const Var id = dec(g, 2);
    for (std::size_t b = 0; b < 2; ++b) CHECK(rows_of(id.value(), b * 5, 5) == dec.queries().value());
  }

  nn::ParameterStore store(10);
  VerbDecoder dec(store, "verb", VerbDecoderConfig{4, 2, 6, 1, 3, true});
  Rng rng(11);
  const auto g = memory(2, 5, 4, 4, rng, true);
  const Matrix w = random_matrix(6, 4, rng);
  auto inputs = trainables(store);
  inputs.emplace_back("v_g", g.tokens);
  auto r = gradcheck([&] { return ag::sum(ag::mul(dec(g, 2), ag::constant(w))); }, inputs, 1e-5, 12);
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("verb decoder rows follow their queries") {
  for (bool self_attention : {false, true}) {
    nn::ParameterStore store(12);
    VerbDecoder dec(store, "verb", VerbDecoderConfig{8, 2, 12, 2, 6, self_attention});
    Rng rng(13);
    const auto g = memory(1, 7, 8, 8, rng);
    const Matrix before = dec(g, 1).value();
    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    Matrix& q = store.get("verb.queries").mutable_value();
    const Matrix orig = q;
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 8; ++j) q(i, j) = orig(perm[i], j);
    const Matrix after = dec(g, 1).value();
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 8; ++j) CHECK(after(i, j) == doctest::Approx(before(perm[i], j)).epsilon(1e-12));
  }
}

TEST_CASE("interaction decoder: zeroed layers, traces and gradients") {
  nn::ParameterStore store(14);
  InteractionDecoder dec(store, "int", InteractionDecoderConfig{8, 2, 12, 3, 6});
  Rng rng(15);
  const auto sp = memory(2, 4, 6, 8, rng);
  const auto g = memory(2, 9, 8, 8, rng);
  const Var q = ag::constant(random_matrix(2 * 5, 8, rng));
  InteractionDecoder::Trace trace;
  const Var out = dec(q, sp, g, 2, &trace);
  CHECK(out.rows() == 10);
  REQUIRE(trace.spatial.size() == 3);
  REQUIRE(trace.global.size() == 3);
  for (const auto& m : trace.spatial) check_rows_stochastic(m);
  for (const auto& m : trace.global) check_rows_stochastic(m);
  CHECK(trace.spatial[0].cols() == 4);
  CHECK(trace.global[0].cols() == 9);

  store.fill("int.layer", 0.0);
  CHECK(dec(q, sp, g, 2).value() == q.value());

  nn::ParameterStore s2(16);
  InteractionDecoder small(s2, "int", InteractionDecoderConfig{4, 2, 6, 2, 3});
  const auto sp2 = memory(2, 3, 3, 4, rng, true);
  const auto g2 = memory(2, 4, 4, 4, rng, true);
  auto q2 = ag::leaf(random_matrix(6, 4, rng));
  const Matrix w = random_matrix(6, 4, rng);
  auto inputs = trainables(s2);
  inputs.emplace_back("q", q2);
  inputs.emplace_back("v_sp", sp2.tokens);
  inputs.emplace_back("v_g", g2.tokens);
  auto r = gradcheck([&] { return ag::sum(ag::mul(small(q2, sp2, g2, 2), ag::constant(w))); }, inputs, 1e-5, 12);
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-4);
}

namespace {

LabelSpace toy_space() {
  return LabelSpace::build({"hold", "ride", "eat"}, {"cup", "horse", "apple", "bike"},
                           {{0, 0}, {0, 2}, {1, 1}, {1, 3}, {2, 2}}, {5, 5, 5, 5, 5}, 10);
}

}  // namespace

TEST_CASE("classifier weights from prompt embeddings") {
  const LabelSpace space = toy_space();
  HashTextEmbedder emb(16, 3);
  const ClassifierWeights w = build_classifier_weights(space, emb);

  // Single-HOI verb: its weight is that HOI's embedding.
  const auto eat = emb.embed(hoi_prompt("eat", "apple"));
  for (std::size_t k = 0; k < 16; ++k) CHECK(w.verbs(2, k) == doctest::Approx(eat[k]).epsilon(1e-12));

  // Explicit summation oracle for a two-HOI verb.
  const auto a = emb.embed(hoi_prompt("hold", "cup"));
  const auto b = emb.embed(hoi_prompt("hold", "apple"));
  std::vector<double> s(16);
  double n = 0;
  for (std::size_t k = 0; k < 16; ++k) n += (s[k] = a[k] + b[k]) * s[k];
  for (std::size_t k = 0; k < 16; ++k) CHECK(std::abs(w.verbs(0, k) - s[k] / std::sqrt(n)) < 1e-7);

  const auto cup = emb.embed(object_prompt("cup"));
  for (std::size_t k = 0; k < 16; ++k) CHECK(w.objects(0, k) == doctest::Approx(cup[k]).epsilon(1e-12));
}

TEST_CASE("compositional weights of verbs with disjoint objects barely overlap") {
  const LabelSpace space = toy_space();
  CompositionalTextEmbedder emb(space.verbs(), space.objects(), 32, 4, 0.05);
  const ClassifierWeights w = build_classifier_weights(space, emb);
  // hold -> {cup, apple}, ride -> {horse, bike}: verb and object blocks are disjoint.
  double dot = 0;
  for (std::size_t k = 0; k < 32; ++k) dot += w.verbs(0, k) * w.verbs(1, k);
  CHECK(std::abs(dot) < 0.01);
  for (std::size_t k = 0; k < 3 + 4; ++k) CHECK(w.verbs(0, k) * w.verbs(1, k) == 0.0);
}

TEST_CASE("a verb without HOIs cannot get a weight") {
  const LabelSpace space = LabelSpace::build({"hold", "ride"}, {"cup"}, {{0, 0}}, {1}, 10);
  HashTextEmbedder emb(8, 1);
  CHECK_THROWS_AS(build_classifier_weights(space, emb), ValidationError);
}

TEST_CASE("verb score fusion equals a per-element cosine oracle") {
  Rng rng(17);
  const std::size_t batch = 1, n = 3, verbs = 4, d = 5;
  const Matrix dv = random_matrix(batch * n, d, rng), cv = random_matrix(batch * verbs, d, rng);
  Matrix w = random_matrix(verbs, d, rng);
  for (std::size_t r = 0; r < verbs; ++r) {
    double s = 0;
    for (double v : w.row(r)) s += v * v;
    for (double& v : w.row(r)) v /= std::sqrt(s);
  }
  const Matrix out = verb_score_fusion(ag::constant(dv), ag::constant(cv), ag::constant(w), batch, 20.0).value();
  auto cosine = [&](std::span<const double> a, std::span<const double> b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < d; ++k) ab += a[k] * b[k], aa += a[k] * a[k], bb += b[k] * b[k];
    return ab / std::sqrt(aa * bb);
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < verbs; ++a)
      CHECK(std::abs(out(i, a) - 20.0 * (cosine(dv.row(i), w.row(a)) + cosine(cv.row(a), w.row(a)))) < 1e-6);

  // D_verb[n] = W_v[a] and an orthogonal image term: logit = scale.
  Matrix d1(1, 2, std::vector<double>{1, 0});
  Matrix c1(2, 2, std::vector<double>{0, 1, 1, 0});
  Matrix w1(2, 2, std::vector<double>{1, 0, 0, 1});
  const Matrix o1 = verb_score_fusion(ag::constant(d1), ag::constant(c1), ag::constant(w1), 1, 20.0).value();
  CHECK(o1(0, 0) == 20.0);
  CHECK(o1(0, 1) == 0.0);
}

TEST_CASE("verb predictor gradients match finite differences") {
  nn::ParameterStore store(18);
  VerbPredictor pred(store, "vp", 4, 3, 20.0);
  Rng rng(19);
  auto q = ag::leaf(random_matrix(2 * 3, 4, rng));
  auto v = ag::leaf(random_matrix(2 * 2, 4, rng));
  Matrix w = random_matrix(2, 3, rng);
  const Matrix proj = random_matrix(6, 2, rng);
  auto inputs = trainables(store);
  inputs.emplace_back("q", q);
  inputs.emplace_back("v_verb", v);
  auto r = gradcheck([&] { return ag::sum(ag::mul(pred(q, v, ag::constant(w), 2).logits, ag::constant(proj))); },
                     inputs, 1e-5, 16);
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-4);
}
