#pragma once

// Small layer library on top of the autodiff tape: parameter ownership,
// linear maps, normalisation, feed-forward and attention blocks.

#include "vtg/autodiff.hpp"

#include <deque>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace vtg::nn {

using ad::Index;
using ad::Mask;
using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

enum class Init { Zeros, Ones, XavierUniform, Uniform01 };

// Owns every trainable tensor of a model. Addresses are stable for the
// lifetime of the store, so layers keep raw pointers.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter* create(const std::string& name, Index rows, Index cols, Init init, bool decay = true);
  Parameter* find(const std::string& name);
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  size_t scalar_count() const;
  void zero_grad();
  std::mt19937_64& rng() { return rng_; }

 private:
  std::deque<Parameter> params_;
  std::map<std::string, Parameter*> by_name_;
  std::mt19937_64 rng_;
};

// Per-forward state: the tape, whether dropout is active, and the RNG that
// drives it.
struct Context {
  Tape& tape;
  bool training = false;
  std::mt19937_64* rng = nullptr;
  double dropout = 0.0;

  Var param(Parameter* p) const { return tape.leaf(*p); }
  Var drop(const Var& v) const { return training ? ad::dropout(v, dropout, rng) : v; }
};

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, Index in, Index out, bool bias = true);
  Var forward(const Context& ctx, const Var& x) const;
  Parameter* weight() const { return weight_; }
  Parameter* bias() const { return bias_; }

 private:
  Parameter* weight_ = nullptr;  // in x out
  Parameter* bias_ = nullptr;    // 1 x out
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, Index dim);
  Var forward(const Context& ctx, const Var& x) const;

 private:
  Parameter* gain_ = nullptr;
  Parameter* bias_ = nullptr;
};

// Position-wise Linear -> ReLU -> dropout -> Linear.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& name, Index dim, Index hidden);
  Var forward(const Context& ctx, const Var& x) const;

 private:
  Linear in_;
  Linear out_;
};

// Stack of Linear layers with ReLU between them (none after the last).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, const std::vector<Index>& widths);
  Var forward(const Context& ctx, const Var& x) const;

 private:
  std::vector<Linear> layers_;
};

// Standard multi-head attention with input and output projections.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name, Index dim, int heads);
  // Returns n x dim; `weights_out`, if given, receives the per-head weights.
  Var forward(const Context& ctx, const Var& query, const Var& key, const Var& value, const Mask& key_mask,
              Var* weights_out = nullptr) const;
  int heads() const { return heads_; }

 private:
  Linear q_, k_, v_, o_;
  int heads_ = 1;
};

// Post-norm transformer encoder layer: x = LN(x + SA(x)); x = LN(x + FFN(x)).
// `pos`, if valid, is added to queries and keys only.
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(ParameterStore& store, const std::string& name, Index dim, int heads, Index hidden);
  Var forward(const Context& ctx, const Var& x, const Mask& mask, const Var& pos = Var(),
              Var* weights_out = nullptr) const;

 private:
  MultiHeadAttention attn_;
  LayerNorm norm1_, norm2_;
  FeedForward ffn_;
};

// Fixed sinusoidal encoding of positions 0..length-1, length x dim.
Matrix sinusoidal_positions(Index length, Index dim);

// Sinusoidal embedding of continuous coordinates in [0,1]: each of the k
// columns of `coords` (n x k) maps to dim/k channels. Differentiable.
Var sine_embedding(const Var& coords, Index dim);

}  // namespace vtg::nn
