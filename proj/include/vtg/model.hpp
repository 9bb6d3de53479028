#pragma once

// Full grounding network: input projections, text anchor, gated interaction,
// composite encoder, saliency head and moment decoder, plus the batch loss.

#include "vtg/config.hpp"
#include "vtg/cross_modal.hpp"
#include "vtg/losses.hpp"
#include "vtg/prediction_heads.hpp"
#include "vtg/text_anchor.hpp"

#include <random>
#include <string>
#include <vector>

namespace vtg {

struct SampleForward {
  Var text_anchor;      // 1 x d
  Var refined_video;    // L_v x d
  Var last_layer_input; // L_v x d
  Var enriched_anchor;  // 1 x d
  Var non_local;        // 1 x L_v
  Var saliency;         // 1 x L_v
  DecoderOutput decoder;
  Mask video_mask;
};

struct BatchLoss {
  Var total;
  Var margin, rank, mr, clip, frame;

  LossComponents values() const;
};

class GroundingModel {
 public:
  GroundingModel(const ModelConfig& cfg, Index video_dim, Index text_dim, std::uint64_t seed);

  SampleForward forward(const nn::Context& ctx, const FeatureSequence& video, const FeatureSequence& text) const;

  // Averages per-sample terms over the batch; the clip term couples samples.
  // `rng` drives the margin loss sampling.
  BatchLoss loss(const nn::Context& ctx, const std::vector<const GroundingSample*>& batch, const LossWeights& w,
                 std::mt19937_64& rng, std::vector<SampleForward>* outputs = nullptr) const;

  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  Index video_dim() const { return video_dim_; }
  Index text_dim() const { return text_dim_; }
  const InteractionStack& interaction() const { return interaction_; }

 private:
  ModelConfig cfg_;
  Index video_dim_;
  Index text_dim_;
  nn::ParameterStore store_;
  nn::Mlp video_proj_;
  nn::Mlp text_proj_;
  TextAnchor anchor_;
  InteractionStack interaction_;
  nn::Linear fuse_;
  CompositeEncoder encoder_;
  SaliencyHead saliency_;
  MomentDecoder decoder_;
};

}  // namespace vtg
