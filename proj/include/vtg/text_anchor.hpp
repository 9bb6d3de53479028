#pragma once

// Global text anchor: one d-vector summarising a whole query.

#include "vtg/core_types.hpp"
#include "vtg/nn.hpp"

#include <string>

namespace vtg {

enum class AnchorMethod { Mean, Max, Weighted, Transformer };

AnchorMethod parse_anchor_method(const std::string& name);
std::string to_string(AnchorMethod method);

namespace anchor {

// Tape-level pooling primitives. `tokens` is L_t x d; outputs are 1 x d.
ad::Var pool_mean(const ad::Var& tokens, const Mask& mask);
ad::Var pool_max(const ad::Var& tokens, const Mask& mask);
// softmax over valid tokens of (token . score_params), then weighted sum.
ad::Var pool_weighted(const ad::Var& tokens, const Mask& mask, const ad::Var& score_params);

// Value-level conveniences on a FeatureSequence.
Matrix pool_mean(const FeatureSequence& text);
Matrix pool_max(const FeatureSequence& text);
Matrix pool_weighted(const FeatureSequence& text, const Matrix& score_params);

}  // namespace anchor

// Selects and owns the parameters of one pooling method. Mean and max are
// parameter-free; weighted learns a scoring vector; transformer prepends a
// learned token and runs one self-attention layer, returning that token.
class TextAnchor {
 public:
  TextAnchor() = default;
  TextAnchor(nn::ParameterStore& store, const std::string& name, AnchorMethod method, Index dim, int heads);

  ad::Var forward(const nn::Context& ctx, const ad::Var& tokens, const Mask& mask) const;
  AnchorMethod method() const { return method_; }

 private:
  AnchorMethod method_ = AnchorMethod::Mean;
  ad::Parameter* score_ = nullptr;  // 1 x d (weighted)
  ad::Parameter* token_ = nullptr;  // 1 x d (transformer)
  nn::EncoderLayer layer_;
};

}  // namespace vtg
