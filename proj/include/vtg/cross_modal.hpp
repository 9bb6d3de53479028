#pragma once

// Gated cross-attention between video clips and text tokens, steered by the
// global text anchor, plus the anchor-query attention that enriches the anchor
// with visual context.

#include "vtg/core_types.hpp"
#include "vtg/nn.hpp"

#include <vector>

namespace vtg {

using ad::Var;

struct GateSwitches {
  bool local = true;
  bool non_local = true;
};

GateSwitches parse_gates(const std::string& name);  // none|local|nonlocal|both
std::string to_string(const GateSwitches& gates);

namespace interaction {

struct CrossAttention {
  Var output;   // L_v x d, F_v'
  Var weights;  // L_v x heads*L_t
  Var queries;  // L_v x d, video W^Q
  Var keys;     // L_t x d, text W^K
};

// Video queries attend over valid text tokens. Weights are row-major d x d.
CrossAttention cross_attention(const Var& video, const Var& text, const Mask& text_mask, const Var& w_q,
                               const Var& w_k, const Var& w_v, int heads);

// sigmoid((Q W_qg) * (K_G W_kg)) with K_G broadcast over clips: L_v x d.
Var local_gate(const Var& queries, const Var& global_key, const Var& w_qg, const Var& w_kg);

Var apply_local_gate(const Var& gate, const Var& features);

struct AnchorAttention {
  Var enriched;     // n x d, one enriched anchor per query row
  Var raw_scores;   // n x L_v, softmax weights averaged over heads
  Var weights;      // n x heads*L_v
};

// Anchors (n x d) attend over valid clips. The anchor is projected with the
// text-key map and the clips with the video-query map, so the similarity is
// measured in the same space the gated cross-attention uses.
AnchorAttention anchor_query_attention(const Var& anchors, const Var& video, const Mask& video_mask,
                                       const Var& w_k, const Var& w_q, const Var& w_v_prime, int heads);
// Same, with the clip projections already computed.
AnchorAttention anchor_query_attention_projected(const Var& anchors, const Var& video_keys,
                                                 const Var& video_values, const Mask& video_mask, const Var& w_k,
                                                 int heads);

// Min-max normalisation of raw scores (1 x L_v) over valid clips.
Var non_local_weights(const Var& raw_scores, const Mask& video_mask);

}  // namespace interaction

struct GatedLayerOutput {
  Var video;             // layer output after residual, norm and feed-forward
  Var gated;             // g_N * (g_L * F_v') before the residual add
  Var attended;          // F_v'
  Var local_gate;        // L_v x d
  Var non_local;         // 1 x L_v, g_N
  Var raw_scores;        // 1 x L_v
  Var enriched_anchor;   // 1 x d
  Var cross_weights;     // L_v x heads*L_t
};

class GatedCrossAttentionLayer {
 public:
  GatedCrossAttentionLayer() = default;
  GatedCrossAttentionLayer(nn::ParameterStore& store, const std::string& name, Index dim, int heads, Index hidden,
                           GateSwitches gates);

  GatedLayerOutput forward(const nn::Context& ctx, const Var& video, const Mask& video_mask, const Var& text,
                           const Mask& text_mask, const Var& anchor) const;

  // psi(anchors, video) with this layer's parameters; anchors n x d.
  interaction::AnchorAttention anchor_attention(const nn::Context& ctx, const Var& anchors, const Var& video,
                                                const Mask& video_mask) const;

  int heads() const { return heads_; }
  const GateSwitches& gates() const { return gates_; }

  ad::Parameter* w_q = nullptr;
  ad::Parameter* w_k = nullptr;
  ad::Parameter* w_v = nullptr;
  ad::Parameter* w_qg = nullptr;
  ad::Parameter* w_kg = nullptr;
  ad::Parameter* w_v_prime = nullptr;

 private:
  nn::LayerNorm norm1_, norm2_;
  nn::FeedForward ffn_;
  int heads_ = 1;
  GateSwitches gates_;
};

struct InteractionOutput {
  Var refined_video;               // final layer output
  std::vector<Var> intermediates;  // one per layer
  Var enriched_anchor;             // final layer
  Var non_local_weights;           // final layer g_N, 1 x L_v
  Var raw_scores;                  // final layer, before min-max
  Var last_layer_input;            // video fed into the final layer
  std::vector<GatedLayerOutput> layers;
};

class InteractionStack {
 public:
  InteractionStack() = default;
  InteractionStack(nn::ParameterStore& store, const std::string& name, int layers, Index dim, int heads,
                   Index hidden, GateSwitches gates);

  InteractionOutput forward(const nn::Context& ctx, const Var& video, const Mask& video_mask, const Var& text,
                            const Mask& text_mask, const Var& anchor) const;

  const GatedCrossAttentionLayer& layer(size_t i) const { return layers_.at(i); }
  const GatedCrossAttentionLayer& last() const { return layers_.back(); }
  size_t size() const { return layers_.size(); }

 private:
  std::vector<GatedCrossAttentionLayer> layers_;
};

}  // namespace vtg
