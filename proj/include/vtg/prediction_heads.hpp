#pragma once

// Composite representation, highlight scoring and moment decoding.

#include "vtg/core_types.hpp"
#include "vtg/nn.hpp"

#include <vector>

namespace vtg {

using ad::Var;

struct CompositeOutput {
  Var tokens;  // (L_v + 1) x d, last row is the enriched anchor
  Mask mask;   // video mask followed by one valid entry
};

// Channel-concat [video, intermediates...], project to d, then append the
// enriched anchor as one extra temporal position.
CompositeOutput fuse_composite(const nn::Context& ctx, const Var& video, const Mask& video_mask,
                               const std::vector<Var>& intermediates, const Var& enriched_anchor,
                               const nn::Linear& projection);

class CompositeEncoder {
 public:
  CompositeEncoder() = default;
  CompositeEncoder(nn::ParameterStore& store, const std::string& name, int layers, Index dim, int heads,
                   Index hidden);
  // Self-attention over the composite sequence followed by the output
  // projection; same shape as the input.
  Var forward(const nn::Context& ctx, const CompositeOutput& composite, const Var& pos) const;
  const nn::EncoderLayer& layer(size_t i) const { return layers_.at(i); }
  size_t size() const { return layers_.size(); }

 private:
  std::vector<nn::EncoderLayer> layers_;
  nn::Linear projection_;
};

// S_i = (W_s a) . (W_v o_i) / d with a the encoded anchor token. With
// vector weights the maps become element-wise scalings.
class SaliencyHead {
 public:
  SaliencyHead() = default;
  SaliencyHead(nn::ParameterStore& store, const std::string& name, Index dim, bool vector_weights);
  // encoded: (L_v + 1) x d with the anchor last. Returns 1 x L_v.
  Var forward(const nn::Context& ctx, const Var& encoded) const;
  bool vector_weights() const { return vector_weights_; }

 private:
  ad::Parameter* w_s_ = nullptr;
  ad::Parameter* w_v_ = nullptr;
  bool vector_weights_ = false;
};

// Value-level form of the saliency score for one clip (used by tests).
Var saliency_scores(const Var& clips, const Var& anchor, const Var& w_s, const Var& w_v, bool vector_weights);

struct DecoderOutput {
  Var spans;            // M x 2 (center, width) after sigmoid
  Var class_log_probs;  // M x 2, column 0 = foreground
  std::vector<Var> span_logits;  // per layer, M x 2
};

// Moment queries carried as learnable (center, width) logits. Each layer
// attends over the clips with a positional query built from the current box
// and refines the logits additively.
class MomentDecoder {
 public:
  MomentDecoder() = default;
  MomentDecoder(nn::ParameterStore& store, const std::string& name, int layers, int queries, Index dim, int heads,
                Index hidden);
  DecoderOutput forward(const nn::Context& ctx, const Var& memory, const Mask& memory_mask,
                        const Var& memory_pos) const;
  int queries() const { return queries_; }

 private:
  struct Layer {
    nn::MultiHeadAttention self_attn;
    nn::MultiHeadAttention cross_attn;
    nn::LayerNorm norm1, norm2, norm3;
    nn::FeedForward ffn;
  };
  std::vector<Layer> layers_;
  ad::Parameter* anchor_logits_ = nullptr;  // M x 2
  nn::Mlp query_pos_;
  nn::Mlp span_delta_;
  nn::Linear class_head_;
  int queries_ = 0;
  Index dim_ = 0;
};

MomentPredictionSet to_prediction_set(const DecoderOutput& out);

struct RankedSpan {
  Moment moment;
  double score = 0.0;
  int query = 0;
};

// Sort by foreground probability (ties by query index), optional greedy 1-D
// NMS, keep at most top_k.
std::vector<RankedSpan> rank_predictions(const MomentPredictionSet& preds, int top_k, bool use_nms,
                                         double nms_iou);

}  // namespace vtg
