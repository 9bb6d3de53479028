#pragma once

// Plain Eigen re-derivations of the interaction layer, written without the
// tape so they can serve as independent oracles.

#include "vtg/autodiff.hpp"

#include <cmath>
#include <vector>

namespace vtg::testing::reference {

using vtg::ad::Index;
using vtg::ad::Mask;
using vtg::ad::Matrix;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Softmax over the columns of one row, restricted to valid columns.
inline Matrix masked_softmax_row(const Matrix& logits, const Mask& mask) {
  Matrix out = Matrix::Zero(1, logits.cols());
  double hi = -1e300;
  for (Index j = 0; j < logits.cols(); ++j) {
    if (mask[static_cast<size_t>(j)]) hi = std::max(hi, logits(0, j));
  }
  double z = 0.0;
  for (Index j = 0; j < logits.cols(); ++j) {
    if (mask[static_cast<size_t>(j)]) z += (out(0, j) = std::exp(logits(0, j) - hi));
  }
  return out / z;
}

struct Attention {
  Matrix output;              // n x d
  std::vector<Matrix> probs;  // per head, n x m
};

inline Attention attention(const Matrix& q, const Matrix& k, const Matrix& v, const Mask& mask, int heads) {
  const Index dk = q.cols() / heads;
  Attention a;
  a.output = Matrix::Zero(q.rows(), v.cols());
  for (int h = 0; h < heads; ++h) {
    Matrix p(q.rows(), k.rows());
    for (Index i = 0; i < q.rows(); ++i) {
      Matrix logits(1, k.rows());
      for (Index j = 0; j < k.rows(); ++j) {
        logits(0, j) = q.row(i).segment(h * dk, dk).dot(k.row(j).segment(h * dk, dk)) / std::sqrt(double(dk));
      }
      p.row(i) = masked_softmax_row(logits, mask);
    }
    a.output.middleCols(h * dk, dk) = p * v.middleCols(h * dk, dk);
    a.probs.push_back(p);
  }
  return a;
}

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias) {
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    for (Index c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mu) / std::sqrt(var + 1e-5) * gain(0, c) + bias(0, c);
  }
  return out;
}

struct LayerWeights {
  Matrix w_q, w_k, w_v, w_qg, w_kg, w_vp;
  Matrix ln1_g, ln1_b, ln2_g, ln2_b;
  Matrix ff1_w, ff1_b, ff2_w, ff2_b;
};

struct LayerResult {
  Matrix video;
  Matrix local_gate;
  Matrix raw;
  Matrix non_local;
  Matrix anchor;
};

inline LayerResult gated_layer(const LayerWeights& w, const Matrix& video, const Mask& vmask, const Matrix& text,
                               const Mask& tmask, const Matrix& anchor, int heads, bool use_local = true,
                               bool use_non_local = true) {
  const Matrix q = video * w.w_q, k = text * w.w_k, v = text * w.w_v;
  const Attention ca = attention(q, k, v, tmask, heads);

  Matrix kg = Matrix::Zero(1, k.cols());
  double n = 0;
  for (Index j = 0; j < k.rows(); ++j) {
    if (tmask[static_cast<size_t>(j)]) {
      kg += k.row(j);
      n += 1;
    }
  }
  kg /= n;
  const Matrix gq = q * w.w_qg, gk = kg * w.w_kg;
  LayerResult r;
  r.local_gate.resize(q.rows(), q.cols());
  for (Index i = 0; i < q.rows(); ++i) {
    for (Index c = 0; c < q.cols(); ++c) r.local_gate(i, c) = sigmoid(gq(i, c) * gk(0, c));
  }

  const Attention aa = attention(anchor * w.w_k, q, video * w.w_vp, vmask, heads);
  r.anchor = aa.output;
  r.raw = Matrix::Zero(1, video.rows());
  for (const Matrix& p : aa.probs) r.raw += p;
  r.raw /= heads;
  double lo = 1e300, hi = -1e300;
  for (Index j = 0; j < video.rows(); ++j) {
    if (vmask[static_cast<size_t>(j)]) {
      lo = std::min(lo, r.raw(0, j));
      hi = std::max(hi, r.raw(0, j));
    }
  }
  r.non_local = Matrix::Zero(1, video.rows());
  for (Index j = 0; j < video.rows(); ++j) {
    if (vmask[static_cast<size_t>(j)]) r.non_local(0, j) = hi > lo ? (r.raw(0, j) - lo) / (hi - lo) : 1.0;
  }

  Matrix gated = use_local ? Matrix(r.local_gate.cwiseProduct(ca.output)) : ca.output;
  if (use_non_local) {
    for (Index i = 0; i < gated.rows(); ++i) gated.row(i) *= r.non_local(0, i);
  }
  const Matrix h = layer_norm(video + gated, w.ln1_g, w.ln1_b);
  Matrix hidden = (h * w.ff1_w).rowwise() + w.ff1_b.row(0);
  hidden = hidden.cwiseMax(0.0);
  const Matrix ff = (hidden * w.ff2_w).rowwise() + w.ff2_b.row(0);
  r.video = layer_norm(h + ff, w.ln2_g, w.ln2_b);
  return r;
}

}  // namespace vtg::testing::reference
