#include "vtg/prediction_heads.hpp"

#include "vtg/error.hpp"
#include "vtg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vtg {

CompositeOutput fuse_composite(const nn::Context& ctx, const Var& video, const Mask& video_mask,
                               const std::vector<Var>& intermediates, const Var& enriched_anchor,
                               const nn::Linear& projection) {
  require(!intermediates.empty(), "fuse_composite: no intermediate outputs");
  std::vector<Var> parts{video};
  for (const Var& o : intermediates) {
    require(o.rows() == video.rows() && o.cols() == video.cols(), "fuse_composite: intermediate shape mismatch",
            ErrorCode::Shape);
    parts.push_back(o);
  }
  require(enriched_anchor.rows() == 1 && enriched_anchor.cols() == video.cols(),
          "fuse_composite: anchor must be 1 x d", ErrorCode::Shape);
  Var fused = projection.forward(ctx, ad::concat_cols(parts));
  require(fused.cols() == video.cols(), "fuse_composite: projection must map back to d", ErrorCode::Shape);
  CompositeOutput out;
  out.tokens = ad::concat_rows({fused, enriched_anchor});
  out.mask = video_mask;
  out.mask.push_back(1);
  return out;
}

CompositeEncoder::CompositeEncoder(nn::ParameterStore& store, const std::string& name, int layers, Index dim,
                                   int heads, Index hidden)
    : projection_(store, name + ".proj", dim, dim) {
  for (int i = 0; i < layers; ++i) {
    layers_.emplace_back(store, name + "." + std::to_string(i), dim, heads, hidden);
  }
}

Var CompositeEncoder::forward(const nn::Context& ctx, const CompositeOutput& composite, const Var& pos) const {
  Var x = composite.tokens;
  for (const nn::EncoderLayer& layer : layers_) x = layer.forward(ctx, x, composite.mask, pos);
  return projection_.forward(ctx, x);
}

Var saliency_scores(const Var& clips, const Var& anchor, const Var& w_s, const Var& w_v, bool vector_weights) {
  const double d = static_cast<double>(clips.cols());
  Var a = vector_weights ? ad::hadamard(anchor, w_s) : ad::matmul(anchor, w_s);
  Var o = vector_weights ? ad::mul_row(clips, w_v) : ad::matmul(clips, w_v);
  return ad::scale(ad::transpose(ad::matmul_nt(o, a)), 1.0 / d);
}

SaliencyHead::SaliencyHead(nn::ParameterStore& store, const std::string& name, Index dim, bool vector_weights)
    : vector_weights_(vector_weights) {
  if (vector_weights) {
    w_s_ = store.create(name + ".w_s", 1, dim, nn::Init::Ones);
    w_v_ = store.create(name + ".w_v", 1, dim, nn::Init::Ones);
  } else {
    w_s_ = store.create(name + ".w_s", dim, dim, nn::Init::XavierUniform);
    w_v_ = store.create(name + ".w_v", dim, dim, nn::Init::XavierUniform);
  }
}

Var SaliencyHead::forward(const nn::Context& ctx, const Var& encoded) const {
  const Index n = encoded.rows() - 1;
  require(n >= 1, "saliency head: composite holds no clips", ErrorCode::Shape);
  Var clips = ad::slice_rows(encoded, 0, n);
  Var anchor = ad::slice_rows(encoded, n, 1);
  return saliency_scores(clips, anchor, ctx.param(w_s_), ctx.param(w_v_), vector_weights_);
}

MomentDecoder::MomentDecoder(nn::ParameterStore& store, const std::string& name, int layers, int queries, Index dim,
                             int heads, Index hidden)
    : query_pos_(store, name + ".query_pos", {dim, dim, dim}),
      span_delta_(store, name + ".span_delta", {dim, dim, 2}),
      class_head_(store, name + ".class", dim, 2),
      queries_(queries),
      dim_(dim) {
  require(queries >= 1, "decoder needs at least one moment query");
  require(layers >= 1, "decoder needs at least one layer");
  for (int i = 0; i < layers; ++i) {
    const std::string p = name + "." + std::to_string(i);
    layers_.push_back(Layer{nn::MultiHeadAttention(store, p + ".self", dim, heads),
                            nn::MultiHeadAttention(store, p + ".cross", dim, heads), nn::LayerNorm(store, p + ".norm1", dim),
                            nn::LayerNorm(store, p + ".norm2", dim), nn::LayerNorm(store, p + ".norm3", dim),
                            nn::FeedForward(store, p + ".ffn", dim, hidden)});
  }
  // Boxes start spread over the video with moderate widths.
  anchor_logits_ = store.create(name + ".anchor_logits", queries, 2, nn::Init::Uniform01, false);
  auto logit = [](double p) { return std::log(p / (1.0 - p)); };
  for (int q = 0; q < queries; ++q) {
    const double center = 0.05 + 0.9 * anchor_logits_->value(q, 0);
    const double width = 0.05 + 0.45 * anchor_logits_->value(q, 1);
    anchor_logits_->value(q, 0) = logit(center);
    anchor_logits_->value(q, 1) = logit(width);
  }
}

DecoderOutput MomentDecoder::forward(const nn::Context& ctx, const Var& memory, const Mask& memory_mask,
                                     const Var& memory_pos) const {
  DecoderOutput out;
  Var logits = ctx.param(anchor_logits_);
  Var content = ctx.tape.constant(Matrix::Zero(queries_, dim_));
  Var keys = memory_pos.valid() ? ad::add(memory, memory_pos) : memory;
  const Mask all = ad::full_mask(queries_);
  for (const Layer& layer : layers_) {
    Var pos = query_pos_.forward(ctx, nn::sine_embedding(ad::sigmoid(logits), dim_));
    Var q = ad::add(content, pos);
    content = layer.norm1.forward(ctx, ad::add(content, ctx.drop(layer.self_attn.forward(ctx, q, q, content, all))));
    Var ca = layer.cross_attn.forward(ctx, ad::add(content, pos), keys, memory, memory_mask);
    content = layer.norm2.forward(ctx, ad::add(content, ctx.drop(ca)));
    content = layer.norm3.forward(ctx, ad::add(content, ctx.drop(layer.ffn.forward(ctx, content))));
    logits = ad::add(logits, span_delta_.forward(ctx, content));
    out.span_logits.push_back(logits);
  }
  out.spans = ad::sigmoid(logits);
  out.class_log_probs = ad::log_softmax_rows(class_head_.forward(ctx, content));
  return out;
}

MomentPredictionSet to_prediction_set(const DecoderOutput& out) {
  MomentPredictionSet set;
  const Matrix& spans = out.spans.value();
  const Matrix& lp = out.class_log_probs.value();
  for (Index q = 0; q < spans.rows(); ++q) {
    set.spans.push_back(Moment{spans(q, 0), spans(q, 1)});
    set.fg_prob.push_back(std::exp(lp(q, 0)));
  }
  return set;
}

std::vector<RankedSpan> rank_predictions(const MomentPredictionSet& preds, int top_k, bool use_nms,
                                         double nms_iou) {
  require(preds.spans.size() == preds.fg_prob.size(), "rank_predictions: span/probability count mismatch");
  std::vector<int> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return preds.fg_prob[static_cast<size_t>(a)] > preds.fg_prob[static_cast<size_t>(b)]; });
  const size_t limit = top_k <= 0 ? preds.size() : std::min(preds.size(), static_cast<size_t>(top_k));
  std::vector<RankedSpan> kept;
  for (int q : order) {
    if (kept.size() >= limit) break;
    const Moment& m = preds.spans[static_cast<size_t>(q)];
    if (use_nms) {
      const Span s = center_width_to_span(m);
      bool suppressed = false;
      for (const RankedSpan& k : kept) {
        if (iou_1d(center_width_to_span(k.moment), s) >= nms_iou) {
          suppressed = true;
          break;
        }
      }
      if (suppressed) continue;
    }
    kept.push_back(RankedSpan{m, preds.fg_prob[static_cast<size_t>(q)], q});
  }
  return kept;
}

}  // namespace vtg
