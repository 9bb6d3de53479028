#include "vtg/cross_modal.hpp"

#include "vtg/error.hpp"

namespace vtg {

GateSwitches parse_gates(const std::string& name) {
  if (name == "none") return {false, false};
  if (name == "local") return {true, false};
  if (name == "nonlocal") return {false, true};
  if (name == "both") return {true, true};
  fail(ErrorCode::InvalidArgument, "unknown gate setting '" + name + "' (none|local|nonlocal|both)");
}

std::string to_string(const GateSwitches& gates) {
  if (gates.local && gates.non_local) return "both";
  if (gates.local) return "local";
  if (gates.non_local) return "nonlocal";
  return "none";
}

namespace interaction {

CrossAttention cross_attention(const Var& video, const Var& text, const Mask& text_mask, const Var& w_q,
                               const Var& w_k, const Var& w_v, int heads) {
  require(ad::count_valid(text_mask) > 0, "cross_attention: every text token is masked");
  CrossAttention r;
  r.queries = ad::matmul(video, w_q);
  r.keys = ad::matmul(text, w_k);
  Var values = ad::matmul(text, w_v);
  r.weights = ad::attention_weights(r.queries, r.keys, text_mask, heads);
  r.output = ad::attention_apply(r.weights, values, heads);
  return r;
}

Var local_gate(const Var& queries, const Var& global_key, const Var& w_qg, const Var& w_kg) {
  Var q = ad::matmul(queries, w_qg);
  Var k = ad::matmul(global_key, w_kg);
  return ad::open_sigmoid(ad::mul_row(q, k));
}

Var apply_local_gate(const Var& gate, const Var& features) { return ad::hadamard(gate, features); }

AnchorAttention anchor_query_attention_projected(const Var& anchors, const Var& video_keys, const Var& video_values,
                                                 const Mask& video_mask, const Var& w_k, int heads) {
  require(ad::count_valid(video_mask) > 0, "anchor_query_attention: every clip is masked");
  AnchorAttention r;
  Var q = ad::matmul(anchors, w_k);
  r.weights = ad::attention_weights(q, video_keys, video_mask, heads);
  r.raw_scores = heads == 1 ? r.weights : ad::head_mean(r.weights, heads);
  r.enriched = ad::attention_apply(r.weights, video_values, heads);
  return r;
}

AnchorAttention anchor_query_attention(const Var& anchors, const Var& video, const Mask& video_mask, const Var& w_k,
                                       const Var& w_q, const Var& w_v_prime, int heads) {
  return anchor_query_attention_projected(anchors, ad::matmul(video, w_q), ad::matmul(video, w_v_prime),
                                          video_mask, w_k, heads);
}

Var non_local_weights(const Var& raw_scores, const Mask& video_mask) {
  return ad::minmax_normalize(raw_scores, video_mask);
}

}  // namespace interaction

GatedCrossAttentionLayer::GatedCrossAttentionLayer(nn::ParameterStore& store, const std::string& name, Index dim,
                                                   int heads, Index hidden, GateSwitches gates)
    : norm1_(store, name + ".norm1", dim),
      norm2_(store, name + ".norm2", dim),
      ffn_(store, name + ".ffn", dim, hidden),
      heads_(heads),
      gates_(gates) {
  require(heads > 0 && dim % heads == 0, "head count must divide model width");
  w_q = store.create(name + ".w_q", dim, dim, nn::Init::XavierUniform);
  w_k = store.create(name + ".w_k", dim, dim, nn::Init::XavierUniform);
  w_v = store.create(name + ".w_v", dim, dim, nn::Init::XavierUniform);
  w_qg = store.create(name + ".w_qg", dim, dim, nn::Init::XavierUniform);
  w_kg = store.create(name + ".w_kg", dim, dim, nn::Init::XavierUniform);
  w_v_prime = store.create(name + ".w_v_prime", dim, dim, nn::Init::XavierUniform);
}

GatedLayerOutput GatedCrossAttentionLayer::forward(const nn::Context& ctx, const Var& video, const Mask& video_mask,
                                                   const Var& text, const Mask& text_mask,
                                                   const Var& anchor) const {
  using namespace interaction;
  GatedLayerOutput out;
  Var wk = ctx.param(w_k);
  CrossAttention ca = cross_attention(video, text, text_mask, ctx.param(w_q), wk, ctx.param(w_v), heads_);
  out.attended = ca.output;
  out.cross_weights = ca.weights;

  Var global_key = ad::masked_mean_rows(ca.keys, text_mask);
  out.local_gate = local_gate(ca.queries, global_key, ctx.param(w_qg), ctx.param(w_kg));

  // One attention computation feeds both the enriched anchor and g_N.
  AnchorAttention aa = anchor_query_attention_projected(anchor, ca.queries, ad::matmul(video, ctx.param(w_v_prime)),
                                                        video_mask, wk, heads_);
  out.raw_scores = aa.raw_scores;
  out.enriched_anchor = aa.enriched;
  out.non_local = non_local_weights(aa.raw_scores, video_mask);

  Var gated = gates_.local ? apply_local_gate(out.local_gate, ca.output) : ca.output;
  if (gates_.non_local) gated = ad::mul_col(gated, ad::transpose(out.non_local));
  out.gated = gated;

  Var h = norm1_.forward(ctx, ad::add(video, ctx.drop(gated)));
  out.video = norm2_.forward(ctx, ad::add(h, ctx.drop(ffn_.forward(ctx, h))));
  return out;
}

interaction::AnchorAttention GatedCrossAttentionLayer::anchor_attention(const nn::Context& ctx, const Var& anchors,
                                                                        const Var& video,
                                                                        const Mask& video_mask) const {
  return interaction::anchor_query_attention(anchors, video, video_mask, ctx.param(w_k), ctx.param(w_q),
                                             ctx.param(w_v_prime), heads_);
}

InteractionStack::InteractionStack(nn::ParameterStore& store, const std::string& name, int layers, Index dim,
                                   int heads, Index hidden, GateSwitches gates) {
  require(layers >= 1, "interaction stack needs at least one layer");
  for (int i = 0; i < layers; ++i) {
    layers_.emplace_back(store, name + "." + std::to_string(i), dim, heads, hidden, gates);
  }
}

InteractionOutput InteractionStack::forward(const nn::Context& ctx, const Var& video, const Mask& video_mask,
                                            const Var& text, const Mask& text_mask, const Var& anchor) const {
  InteractionOutput out;
  Var x = video;
  for (const GatedCrossAttentionLayer& layer : layers_) {
    out.last_layer_input = x;
    GatedLayerOutput lo = layer.forward(ctx, x, video_mask, text, text_mask, anchor);
    x = lo.video;
    out.intermediates.push_back(lo.video);
    out.layers.push_back(lo);
  }
  const GatedLayerOutput& last = out.layers.back();
  out.refined_video = x;
  out.enriched_anchor = last.enriched_anchor;
  out.non_local_weights = last.non_local;
  out.raw_scores = last.raw_scores;
  return out;
}

}  // namespace vtg
