#include "vtg/nn.hpp"

#include "vtg/error.hpp"

#include <cmath>
#include <numbers>

namespace vtg::nn {

Parameter* ParameterStore::create(const std::string& name, Index rows, Index cols, Init init, bool decay) {
  if (by_name_.count(name) != 0) fail(ErrorCode::Internal, "duplicate parameter " + name);
  Parameter p;
  p.name = name;
  p.decay = decay;
  p.grad = Matrix::Zero(rows, cols);
  switch (init) {
    case Init::Zeros:
      p.value = Matrix::Zero(rows, cols);
      break;
    case Init::Ones:
      p.value = Matrix::Ones(rows, cols);
      break;
    case Init::XavierUniform: {
      const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::uniform_real_distribution<double> u(-bound, bound);
      p.value.resize(rows, cols);
      for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = u(rng_);
      break;
    }
    case Init::Uniform01: {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      p.value.resize(rows, cols);
      for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = u(rng_);
      break;
    }
  }
  params_.push_back(std::move(p));
  Parameter* ptr = &params_.back();
  by_name_[name] = ptr;
  return ptr;
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (Parameter& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const Parameter& p : params_) out.push_back(&p);
  return out;
}

size_t ParameterStore::scalar_count() const {
  size_t n = 0;
  for (const Parameter& p : params_) n += static_cast<size_t>(p.value.size());
  return n;
}

void ParameterStore::zero_grad() {
  for (Parameter& p : params_) p.grad.setZero(p.value.rows(), p.value.cols());
}

Linear::Linear(ParameterStore& store, const std::string& name, Index in, Index out, bool bias) {
  weight_ = store.create(name + ".weight", in, out, Init::XavierUniform);
  if (bias) bias_ = store.create(name + ".bias", 1, out, Init::Zeros, false);
}

Var Linear::forward(const Context& ctx, const Var& x) const {
  Var y = ad::matmul(x, ctx.param(weight_));
  if (bias_ != nullptr) y = ad::add_row(y, ctx.param(bias_));
  return y;
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, Index dim) {
  gain_ = store.create(name + ".gain", 1, dim, Init::Ones, false);
  bias_ = store.create(name + ".bias", 1, dim, Init::Zeros, false);
}

Var LayerNorm::forward(const Context& ctx, const Var& x) const {
  return ad::layer_norm(x, ctx.param(gain_), ctx.param(bias_));
}

FeedForward::FeedForward(ParameterStore& store, const std::string& name, Index dim, Index hidden)
    : in_(store, name + ".in", dim, hidden), out_(store, name + ".out", hidden, dim) {}

Var FeedForward::forward(const Context& ctx, const Var& x) const {
  return out_.forward(ctx, ctx.drop(ad::relu(in_.forward(ctx, x))));
}

Mlp::Mlp(ParameterStore& store, const std::string& name, const std::vector<Index>& widths) {
  if (widths.size() < 2) fail(ErrorCode::InvalidArgument, "Mlp needs at least input and output widths");
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    layers_.emplace_back(store, name + "." + std::to_string(i), widths[i], widths[i + 1]);
  }
}

Var Mlp::forward(const Context& ctx, const Var& x) const {
  Var h = x;
  for (size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(ctx, h);
    if (i + 1 < layers_.size()) h = ad::relu(h);
  }
  return h;
}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& name, Index dim, int heads)
    : q_(store, name + ".q", dim, dim),
      k_(store, name + ".k", dim, dim),
      v_(store, name + ".v", dim, dim),
      o_(store, name + ".o", dim, dim),
      heads_(heads) {
  if (heads <= 0 || dim % heads != 0) fail(ErrorCode::InvalidArgument, "head count must divide model width");
}

Var MultiHeadAttention::forward(const Context& ctx, const Var& query, const Var& key, const Var& value,
                                const Mask& key_mask, Var* weights_out) const {
  Var w = ad::attention_weights(q_.forward(ctx, query), k_.forward(ctx, key), key_mask, heads_);
  if (weights_out != nullptr) *weights_out = w;
  Var attended = ad::attention_apply(w, v_.forward(ctx, value), heads_);
  return o_.forward(ctx, attended);
}

EncoderLayer::EncoderLayer(ParameterStore& store, const std::string& name, Index dim, int heads, Index hidden)
    : attn_(store, name + ".attn", dim, heads),
      norm1_(store, name + ".norm1", dim),
      norm2_(store, name + ".norm2", dim),
      ffn_(store, name + ".ffn", dim, hidden) {}

Var EncoderLayer::forward(const Context& ctx, const Var& x, const Mask& mask, const Var& pos,
                          Var* weights_out) const {
  Var qk = pos.valid() ? ad::add(x, pos) : x;
  Var a = attn_.forward(ctx, qk, qk, x, mask, weights_out);
  Var h = norm1_.forward(ctx, ad::add(x, ctx.drop(a)));
  return norm2_.forward(ctx, ad::add(h, ctx.drop(ffn_.forward(ctx, h))));
}

Matrix sinusoidal_positions(Index length, Index dim) {
  Matrix pe(length, dim);
  for (Index p = 0; p < length; ++p) {
    for (Index i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe(p, i) = (i % 2 == 0) ? std::sin(static_cast<double>(p) * freq) : std::cos(static_cast<double>(p) * freq);
    }
  }
  return pe;
}

Var sine_embedding(const Var& coords, Index dim) {
  const Index k = coords.cols();
  if (dim % (2 * k) != 0) fail(ErrorCode::Shape, "sine_embedding: dim must be divisible by 2*coords");
  const Index per = dim / k;
  Tape& tape = coords.tape();
  std::vector<Var> parts;
  for (Index c = 0; c < k; ++c) {
    // frequency row: 2*pi / 10000^(2i/per) for i in [0, per/2)
    Matrix freq(1, per / 2);
    for (Index i = 0; i < per / 2; ++i) {
      freq(0, i) = 2.0 * std::numbers::pi / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(per));
    }
    Var col = ad::slice_cols(coords, c, 1);
    Var angles = ad::matmul(col, tape.constant(freq));
    parts.push_back(ad::sin(angles));
    parts.push_back(ad::cos(angles));
  }
  return ad::concat_cols(parts);
}

}  // namespace vtg::nn
