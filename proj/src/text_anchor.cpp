#include "vtg/text_anchor.hpp"

#include "vtg/error.hpp"

namespace vtg {

using ad::Var;

AnchorMethod parse_anchor_method(const std::string& name) {
  if (name == "mean") return AnchorMethod::Mean;
  if (name == "max") return AnchorMethod::Max;
  if (name == "weighted") return AnchorMethod::Weighted;
  if (name == "transformer") return AnchorMethod::Transformer;
  fail(ErrorCode::InvalidArgument, "unknown anchor method '" + name + "' (mean|max|weighted|transformer)");
}

std::string to_string(AnchorMethod method) {
  switch (method) {
    case AnchorMethod::Mean:
      return "mean";
    case AnchorMethod::Max:
      return "max";
    case AnchorMethod::Weighted:
      return "weighted";
    case AnchorMethod::Transformer:
      return "transformer";
  }
  return "mean";
}

namespace anchor {

Var pool_mean(const Var& tokens, const Mask& mask) { return ad::masked_mean_rows(tokens, mask); }

Var pool_max(const Var& tokens, const Mask& mask) { return ad::masked_max_rows(tokens, mask); }

Var pool_weighted(const Var& tokens, const Mask& mask, const Var& score_params) {
  // weights: 1 x L_t, one attention head with the scoring vector as query
  Var w = ad::attention_weights(score_params, tokens, mask, 1);
  // attention_weights scales by 1/sqrt(d); the learned vector absorbs it.
  return ad::matmul(w, tokens);
}

namespace {

template <typename Fn>
Matrix run_constant(const FeatureSequence& text, Fn fn) {
  text.validate("text");
  ad::Tape tape;
  Var t = tape.constant(text.embeddings);
  return fn(tape, t).value();
}

}  // namespace

Matrix pool_mean(const FeatureSequence& text) {
  return run_constant(text, [&](ad::Tape&, const Var& t) { return pool_mean(t, text.mask); });
}

Matrix pool_max(const FeatureSequence& text) {
  return run_constant(text, [&](ad::Tape&, const Var& t) { return pool_max(t, text.mask); });
}

Matrix pool_weighted(const FeatureSequence& text, const Matrix& score_params) {
  return run_constant(text, [&](ad::Tape& tape, const Var& t) {
    return pool_weighted(t, text.mask, tape.constant(score_params));
  });
}

}  // namespace anchor

TextAnchor::TextAnchor(nn::ParameterStore& store, const std::string& name, AnchorMethod method, Index dim,
                       int heads)
    : method_(method) {
  if (method == AnchorMethod::Weighted) {
    score_ = store.create(name + ".score", 1, dim, nn::Init::XavierUniform);
  } else if (method == AnchorMethod::Transformer) {
    token_ = store.create(name + ".token", 1, dim, nn::Init::XavierUniform);
    layer_ = nn::EncoderLayer(store, name + ".layer", dim, heads, 4 * dim);
  }
}

Var TextAnchor::forward(const nn::Context& ctx, const Var& tokens, const Mask& mask) const {
  require(ad::count_valid(mask) > 0, "text anchor: every token is masked");
  switch (method_) {
    case AnchorMethod::Mean:
      return anchor::pool_mean(tokens, mask);
    case AnchorMethod::Max:
      return anchor::pool_max(tokens, mask);
    case AnchorMethod::Weighted:
      return anchor::pool_weighted(tokens, mask, ctx.param(score_));
    case AnchorMethod::Transformer: {
      Var seq = ad::concat_rows({ctx.param(token_), tokens});
      Mask m(mask.size() + 1, 1);
      std::copy(mask.begin(), mask.end(), m.begin() + 1);
      Var out = layer_.forward(ctx, seq, m);
      return ad::slice_rows(out, 0, 1);
    }
  }
  return anchor::pool_mean(tokens, mask);
}

}  // namespace vtg
