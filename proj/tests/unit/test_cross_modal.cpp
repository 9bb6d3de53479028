#include "gradcheck.hpp"
#include "reference.hpp"
#include "vtg/cross_modal.hpp"
#include "vtg/error.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace vtg;
using ad::full_mask;
namespace ref = vtg::testing::reference;

namespace {

void randomize(nn::ParameterStore& store, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (ad::Parameter* p : store.all()) {
    for (Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += n(rng);
  }
}

Matrix gaussian(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

ref::LayerWeights weights_of(nn::ParameterStore& s, const std::string& p) {
  auto v = [&](const std::string& n) { return s.find(p + n)->value; };
  return ref::LayerWeights{v(".w_q"),        v(".w_k"),          v(".w_v"),           v(".w_qg"),
                           v(".w_kg"),       v(".w_v_prime"),    v(".norm1.gain"),    v(".norm1.bias"),
                           v(".norm2.gain"), v(".norm2.bias"),   v(".ffn.in.weight"), v(".ffn.in.bias"),
                           v(".ffn.out.weight"), v(".ffn.out.bias")};
}

struct Fixture {
  Index d = 4;
  int heads = 2;
  nn::ParameterStore store{11};
  GatedCrossAttentionLayer layer;
  Matrix video, text, anchor;
  Mask vmask, tmask;

  Fixture(Index lv, Index lt, std::uint64_t seed, GateSwitches gates = {}) {
    layer = GatedCrossAttentionLayer(store, "g", d, heads, 4 * d, gates);
    randomize(store, seed);
    std::mt19937_64 rng(seed + 100);
    video = gaussian(lv, d, rng);
    text = gaussian(lt, d, rng);
    anchor = gaussian(1, d, rng);
    vmask = full_mask(lv);
    tmask = full_mask(lt);
  }

  GatedLayerOutput run(ad::Tape& t) const {
    nn::Context ctx{t};
    return layer.forward(ctx, t.constant(video), vmask, t.constant(text), tmask, t.constant(anchor));
  }
};

Var identity(ad::Tape& t, Index d) { return t.constant(Matrix::Identity(d, d)); }

}  // namespace

TEST_CASE("cross attention: single token, uniform logits, hand instance") {
  ad::Tape t;
  std::mt19937_64 rng(1);
  const Matrix video = gaussian(3, 2, rng), wv = gaussian(2, 2, rng);
  Matrix token(1, 2);
  token << 0.3, -0.7;
  auto one = interaction::cross_attention(t.constant(video), t.constant(token), full_mask(1), identity(t, 2),
                                          identity(t, 2), t.constant(wv), 1);
  for (Index i = 0; i < 3; ++i) CHECK((one.output.value().row(i) - token * wv).norm() < 1e-12);

  const Matrix text = gaussian(3, 2, rng);
  auto uni = interaction::cross_attention(t.constant(video), t.constant(text), full_mask(3),
                                          t.constant(Matrix::Zero(2, 2)), identity(t, 2), t.constant(wv), 1);
  const Matrix mean_value = (text * wv).colwise().mean();
  for (Index i = 0; i < 3; ++i) CHECK((uni.output.value().row(i) - mean_value).norm() < 1e-12);

  Matrix v2(2, 2), t2(2, 2);
  v2 << 1, 0, 0, 1;
  t2 << 1, 2, 3, -1;
  auto hand = interaction::cross_attention(t.constant(v2), t.constant(t2), full_mask(2), identity(t, 2),
                                           identity(t, 2), identity(t, 2), 1);
  // row 0 logits (1, 3)/sqrt2, row 1 logits (2, -1)/sqrt2
  const double a0 = 1.0 / (1.0 + std::exp((3.0 - 1.0) / std::sqrt(2.0)));
  const double a1 = 1.0 / (1.0 + std::exp((-1.0 - 2.0) / std::sqrt(2.0)));
  CHECK(hand.output.value()(0, 0) == doctest::Approx(a0 * 1 + (1 - a0) * 3).epsilon(1e-6));
  CHECK(hand.output.value()(0, 1) == doctest::Approx(a0 * 2 + (1 - a0) * -1).epsilon(1e-6));
  CHECK(hand.output.value()(1, 0) == doctest::Approx(a1 * 1 + (1 - a1) * 3).epsilon(1e-6));
  CHECK(hand.output.value()(1, 1) == doctest::Approx(a1 * 2 + (1 - a1) * -1).epsilon(1e-6));

  CHECK_THROWS_AS(interaction::cross_attention(t.constant(v2), t.constant(t2), Mask{0, 0}, identity(t, 2),
                                               identity(t, 2), identity(t, 2), 1),
                  Error);
}

TEST_CASE("local gate examples") {
  ad::Tape t;
  Matrix q(1, 2), k(1, 2);
  q << 1, -1;
  k << 2, 2;
  const Matrix g = interaction::local_gate(t.constant(q), t.constant(k), identity(t, 2), identity(t, 2)).value();
  CHECK(g(0, 0) == doctest::Approx(0.8808).epsilon(1e-4));
  CHECK(g(0, 1) == doctest::Approx(0.1192).epsilon(1e-4));
  CHECK(g(0, 0) == doctest::Approx(ref::sigmoid(2.0)).epsilon(1e-15));

  const Matrix zero =
      interaction::local_gate(t.constant(Matrix::Zero(3, 2)), t.constant(k), identity(t, 2), identity(t, 2)).value();
  CHECK((zero.array() == 0.5).all());
  const Matrix big = interaction::local_gate(t.constant(Matrix::Constant(1, 2, 8.0)), t.constant(k), identity(t, 2),
                                             identity(t, 2))
                         .value();
  CHECK((big.array() > 0.9999).all());

  Matrix f(2, 2), gate(2, 2);
  f << 1.5, -2, 0.25, 4;
  gate << 0.2, 0.9, 0.5, 0.1;
  const Matrix prod = interaction::apply_local_gate(t.constant(gate), t.constant(f)).value();
  CHECK(prod(0, 0) == doctest::Approx(0.3));
  CHECK(prod(0, 1) == doctest::Approx(-1.8));
  CHECK(prod(1, 0) == doctest::Approx(0.125));
  CHECK(prod(1, 1) == doctest::Approx(0.4));
  CHECK(interaction::apply_local_gate(t.constant(Matrix::Constant(2, 2, 0.5)), t.constant(f)).value() == f * 0.5);
}

TEST_CASE("non-local weights") {
  ad::Tape t;
  Matrix raw(1, 3);
  raw << 0.1, 0.3, 0.6;
  const Matrix g = interaction::non_local_weights(t.constant(raw), full_mask(3)).value();
  CHECK(g(0, 0) == 0.0);
  CHECK(g(0, 1) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(g(0, 2) == 1.0);

  std::mt19937_64 rng(3);
  const Matrix anchor = gaussian(1, 4, rng), clip = gaussian(1, 4, rng);
  const Matrix same = clip.replicate(5, 1);
  const Matrix w = gaussian(4, 4, rng);
  auto single = interaction::anchor_query_attention(t.constant(anchor), t.constant(clip), full_mask(1), t.constant(w),
                                                    t.constant(w), t.constant(w), 2);
  CHECK(interaction::non_local_weights(single.raw_scores, full_mask(1)).value()(0, 0) == 1.0);
  CHECK((single.enriched.value() - clip * w).norm() < 1e-12);
  auto equal = interaction::anchor_query_attention(t.constant(anchor), t.constant(same), full_mask(5), t.constant(w),
                                                   t.constant(w), t.constant(w), 2);
  CHECK((interaction::non_local_weights(equal.raw_scores, full_mask(5)).value().array() == 1.0).all());
  CHECK((equal.enriched.value() - clip * w).norm() < 1e-12);
  CHECK_THROWS_AS(interaction::anchor_query_attention(t.constant(anchor), t.constant(same), Mask(5, 0),
                                                      t.constant(w), t.constant(w), t.constant(w), 2),
                  Error);
}

TEST_CASE("anchor attention on a two-clip hand instance") {
  ad::Tape t;
  Matrix anchor(1, 2), video(2, 2);
  anchor << 1, 0.5;
  video << 2, 0, 0, 1;
  auto r = interaction::anchor_query_attention(t.constant(anchor), t.constant(video), full_mask(2), identity(t, 2),
                                               identity(t, 2), identity(t, 2), 1);
  const double s0 = 2.0 / std::sqrt(2.0), s1 = 0.5 / std::sqrt(2.0);
  const double p0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
  CHECK(r.enriched.value()(0, 0) == doctest::Approx(2 * p0).epsilon(1e-6));
  CHECK(r.enriched.value()(0, 1) == doctest::Approx(1 - p0).epsilon(1e-6));
  CHECK(r.raw_scores.value()(0, 0) == doctest::Approx(p0).epsilon(1e-12));
}

TEST_CASE("gated layer matches the straight-line reference") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Fixture f(3, 2, seed);
    ad::Tape t;
    const GatedLayerOutput out = f.run(t);
    const ref::LayerResult r =
        ref::gated_layer(weights_of(f.store, "g"), f.video, f.vmask, f.text, f.tmask, f.anchor, f.heads);
    CHECK((out.video.value() - r.video).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((out.local_gate.value() - r.local_gate).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out.raw_scores.value() - r.raw).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out.non_local.value() - r.non_local).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out.enriched_anchor.value() - r.anchor).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("gate switches") {
  for (const char* name : {"none", "local", "nonlocal", "both"}) {
    const GateSwitches g = parse_gates(name);
    CHECK(to_string(g) == name);
    Fixture f(4, 3, 5, g);
    ad::Tape t;
    const ref::LayerResult r = ref::gated_layer(weights_of(f.store, "g"), f.video, f.vmask, f.text, f.tmask,
                                                f.anchor, f.heads, g.local, g.non_local);
    CHECK((f.run(t).video.value() - r.video).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK_THROWS_AS(parse_gates("all"), Error);
}

TEST_CASE("zero non-local gate suppresses the attended contribution") {
  Fixture f(4, 3, 6);
  ad::Tape t;
  const GatedLayerOutput out = f.run(t);
  Index lo = 0;
  out.non_local.value().row(0).minCoeff(&lo);
  CHECK(out.non_local.value()(0, lo) == 0.0);
  CHECK(out.gated.value().row(lo).norm() == 0.0);
  Index hi = 0;
  out.non_local.value().row(0).maxCoeff(&hi);
  CHECK(out.non_local.value()(0, hi) == 1.0);
}

TEST_CASE("gate ranges, attention rows and anchor consistency") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Fixture f(5, 4, seed);
    f.vmask = Mask{1, 1, 0, 1, 1};
    f.tmask = Mask{1, 0, 1, 1};
    ad::Tape t;
    const GatedLayerOutput out = f.run(t);
    CHECK((out.local_gate.value().array() > 0.0).all());
    CHECK((out.local_gate.value().array() < 1.0).all());
    CHECK((out.non_local.value().array() >= 0.0).all());
    CHECK((out.non_local.value().array() <= 1.0).all());
    const Matrix& cw = out.cross_weights.value();
    for (int h = 0; h < f.heads; ++h) {
      for (Index i = 0; i < cw.rows(); ++i) {
        CHECK(std::abs(cw.block(i, h * 4, 1, 4).sum() - 1.0) < 1e-9);
        CHECK(cw(i, h * 4 + 1) == 0.0);
      }
    }
    // one computation feeds both consumers
    nn::Context ctx{t};
    auto again = f.layer.anchor_attention(ctx, t.constant(f.anchor), t.constant(f.video), f.vmask);
    CHECK(again.raw_scores.value() == out.raw_scores.value());
    CHECK(ad::head_mean(again.weights, f.heads).value() == out.raw_scores.value());
  }
}

TEST_CASE("permuting clips permutes the refined video and the non-local gate") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    nn::ParameterStore store(seed);
    InteractionStack stack(store, "s", 2, 8, 2, 32, {});
    randomize(store, seed);
    std::mt19937_64 rng(seed);
    const Matrix video = gaussian(6, 8, rng), text = gaussian(3, 8, rng), anchor = gaussian(1, 8, rng);
    const Mask vmask{1, 1, 1, 0, 1, 1};
    std::vector<Index> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix pv(6, 8);
    Mask pm(6);
    for (Index i = 0; i < 6; ++i) {
      pv.row(i) = video.row(perm[i]);
      pm[i] = vmask[perm[i]];
    }
    ad::Tape t;
    nn::Context ctx{t};
    auto a = stack.forward(ctx, t.constant(video), vmask, t.constant(text), full_mask(3), t.constant(anchor));
    auto b = stack.forward(ctx, t.constant(pv), pm, t.constant(text), full_mask(3), t.constant(anchor));
    for (Index i = 0; i < 6; ++i) {
      CHECK((b.refined_video.value().row(i) - a.refined_video.value().row(perm[i])).norm() < 1e-9);
      CHECK(std::abs(b.non_local_weights.value()(0, i) - a.non_local_weights.value()(0, perm[i])) < 1e-9);
    }
    CHECK((b.enriched_anchor.value() - a.enriched_anchor.value()).norm() < 1e-9);
  }
}

TEST_CASE("interaction stack structure and composition") {
  for (int layers : {1, 2, 3}) {
    nn::ParameterStore store(4);
    InteractionStack stack(store, "s", layers, 4, 2, 16, {});
    randomize(store, 9);
    std::mt19937_64 rng(layers);
    const Matrix video = gaussian(3, 4, rng), text = gaussian(2, 4, rng), anchor = gaussian(1, 4, rng);
    ad::Tape t;
    nn::Context ctx{t};
    auto out = stack.forward(ctx, t.constant(video), full_mask(3), t.constant(text), full_mask(2), t.constant(anchor));
    REQUIRE(out.intermediates.size() == static_cast<size_t>(layers));
    CHECK(out.intermediates.back().value() == out.refined_video.value());

    Matrix x = video;
    ref::LayerResult r;
    for (int l = 0; l < layers; ++l) {
      r = ref::gated_layer(weights_of(store, "s." + std::to_string(l)), x, full_mask(3), text, full_mask(2), anchor, 2);
      CHECK((out.intermediates[static_cast<size_t>(l)].value() - r.video).cwiseAbs().maxCoeff() < 1e-9);
      x = r.video;
    }
    CHECK((out.non_local_weights.value() - r.non_local).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((out.enriched_anchor.value() - r.anchor).cwiseAbs().maxCoeff() < 1e-9);
  }
  nn::ParameterStore store(1);
  CHECK_THROWS_AS(InteractionStack(store, "s", 0, 4, 2, 16, {}), Error);
  CHECK_THROWS_AS(GatedCrossAttentionLayer(store, "x", 6, 4, 16, {}), Error);
}

TEST_CASE("interaction gradients") {
  nn::ParameterStore store(2);
  InteractionStack stack(store, "s", 2, 8, 2, 32, {});
  randomize(store, 2, 0.2);
  std::mt19937_64 rng(2);
  const Matrix video = gaussian(5, 8, rng), text = gaussian(4, 8, rng), anchor = gaussian(1, 8, rng);
  auto checks = testing::check_gradients(store.all(), [&](ad::Tape& t) {
    nn::Context ctx{t};
    auto out = stack.forward(ctx, t.constant(video), Mask{1, 1, 1, 1, 0}, t.constant(text), full_mask(4),
                             t.constant(anchor));
    return ad::add(ad::sum(out.refined_video), ad::sum(out.enriched_anchor));
  });
  for (const auto& c : checks) {
    INFO(c.name);
    CHECK(c.rel_error < 1e-3);
  }
}
