#include "vtg/model.hpp"

#include "vtg/error.hpp"

namespace vtg {

LossComponents BatchLoss::values() const {
  return LossComponents{margin.scalar(), rank.scalar(), mr.scalar(), clip.scalar(), frame.scalar()};
}

GroundingModel::GroundingModel(const ModelConfig& cfg, Index video_dim, Index text_dim, std::uint64_t seed)
    : cfg_(cfg), video_dim_(video_dim), text_dim_(text_dim), store_(seed) {
  const Index d = cfg.dim;
  const Index hidden = d * cfg.ffn_mult;
  video_proj_ = nn::Mlp(store_, "video_proj", {video_dim, d, d});
  text_proj_ = nn::Mlp(store_, "text_proj", {text_dim, d, d});
  anchor_ = TextAnchor(store_, "anchor", cfg.anchor, d, cfg.heads);
  interaction_ = InteractionStack(store_, "interaction", cfg.interaction_layers, d, cfg.interaction_heads, hidden, cfg.gates);
  fuse_ = nn::Linear(store_, "fuse", d * (cfg.interaction_layers + 1), d);
  encoder_ = CompositeEncoder(store_, "encoder", cfg.encoder_layers, d, cfg.heads, hidden);
  saliency_ = SaliencyHead(store_, "saliency", d, cfg.saliency_vector_weights);
  decoder_ = MomentDecoder(store_, "decoder", cfg.decoder_layers, cfg.queries, d, cfg.heads, hidden);
}

SampleForward GroundingModel::forward(const nn::Context& ctx, const FeatureSequence& video,
                                      const FeatureSequence& text) const {
  video.validate("video");
  text.validate("text");
  require(video.dim() == video_dim_, "video feature width does not match the model", ErrorCode::Shape);
  require(text.dim() == text_dim_, "text feature width does not match the model", ErrorCode::Shape);
  SampleForward out;
  out.video_mask = video.mask;
  const Index n = video.length();
  Var pos = ctx.tape.constant(nn::sinusoidal_positions(n + 1, cfg_.dim));
  Var v = ad::add(video_proj_.forward(ctx, ctx.tape.constant(video.embeddings)), ad::slice_rows(pos, 0, n));
  Var t = text_proj_.forward(ctx, ctx.tape.constant(text.embeddings));
  out.text_anchor = anchor_.forward(ctx, t, text.mask);

  InteractionOutput io = interaction_.forward(ctx, v, video.mask, t, text.mask, out.text_anchor);
  out.refined_video = io.refined_video;
  out.last_layer_input = io.last_layer_input;
  out.enriched_anchor = io.enriched_anchor;
  out.non_local = io.non_local_weights;

  CompositeOutput composite = fuse_composite(ctx, v, video.mask, io.intermediates, io.enriched_anchor, fuse_);
  Var encoded = encoder_.forward(ctx, composite, pos);
  out.saliency = saliency_.forward(ctx, encoded);
  out.decoder = decoder_.forward(ctx, ad::slice_rows(encoded, 0, n), video.mask, ad::slice_rows(pos, 0, n));
  return out;
}

BatchLoss GroundingModel::loss(const nn::Context& ctx, const std::vector<const GroundingSample*>& batch,
                               const LossWeights& w, std::mt19937_64& rng,
                               std::vector<SampleForward>* outputs) const {
  require(!batch.empty(), "loss: empty batch");
  ad::Tape& tape = ctx.tape;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<SampleForward> fwd;
  fwd.reserve(batch.size());
  Var margin = tape.constant_scalar(0.0), rank = tape.constant_scalar(0.0), mr = tape.constant_scalar(0.0),
      frame = tape.constant_scalar(0.0);
  std::vector<Var> anchors;
  for (const GroundingSample* s : batch) {
    SampleForward f = forward(ctx, s->video, s->text);
    const std::vector<int>& rel = s->relevance.indicators;
    require(static_cast<Index>(rel.size()) == s->video.length(), "loss: relevance labels do not match clips",
            ErrorCode::Shape);
    margin = ad::add(margin, margin_loss(f.saliency, rel, w.margin, rng));
    rank = ad::add(rank, rank_contrastive_loss(f.saliency, s->saliency_labels.value_or(std::vector<double>{}), rel,
                                               w.temperature));
    frame = ad::add(frame, frame_relevance_loss(f.refined_video, f.text_anchor, rel));
    if (!s->gt_moments.empty()) {
      MatchResult match = hungarian_match(s->gt_moments, to_prediction_set(f.decoder), w);
      mr = ad::add(mr, moment_retrieval_loss(f.decoder.spans, f.decoder.class_log_probs, s->gt_moments, match, w));
    }
    anchors.push_back(f.text_anchor);
    fwd.push_back(std::move(f));
  }

  // Cross table: every anchor attends over every video through the last layer.
  Var all_anchors = ad::concat_rows(anchors);
  std::vector<Var> table;
  const GatedCrossAttentionLayer& last = interaction_.last();
  for (const SampleForward& f : fwd) {
    table.push_back(last.anchor_attention(ctx, all_anchors, f.last_layer_input, f.video_mask).enriched);
  }

  BatchLoss out;
  out.margin = ad::scale(margin, inv_b);
  out.rank = ad::scale(rank, inv_b);
  out.mr = ad::scale(mr, inv_b);
  out.frame = ad::scale(frame, inv_b);
  out.clip = clip_consistency_loss(all_anchors, table);
  out.total = total_loss(out.margin, out.rank, out.mr, out.clip, out.frame, w);
  if (outputs) *outputs = std::move(fwd);
  return out;
}

}  // namespace vtg
