#include "vtg/losses.hpp"

#include "vtg/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace vtg {

namespace {

Var row_vector(ad::Tape& tape, const std::vector<double>& v) {
  Matrix m(1, static_cast<Index>(v.size()));
  for (size_t i = 0; i < v.size(); ++i) m(0, static_cast<Index>(i)) = v[i];
  return tape.constant(std::move(m));
}

}  // namespace

// ---------------------------------------------------------------------------

Var clip_consistency_loss(const Var& anchors, const std::vector<Var>& table) {
  const Index b = anchors.rows();
  require(b >= 1, "clip_consistency_loss: empty batch");
  require(static_cast<Index>(table.size()) == b, "clip_consistency_loss: table must have one entry per video",
          ErrorCode::Shape);
  std::vector<Var> row_sims, col_sims;
  for (Index j = 0; j < b; ++j) {
    const Var& e = table[static_cast<size_t>(j)];
    require(e.rows() == b && e.cols() == anchors.cols(), "clip_consistency_loss: table entry shape",
            ErrorCode::Shape);
    row_sims.push_back(ad::row_sum(ad::hadamard(e, anchors)));             // t^{ij} . t^i
    col_sims.push_back(ad::matmul_nt(e, ad::slice_rows(anchors, j, 1)));  // t^{ij} . t^j
  }
  Var rows = ad::concat_cols(row_sims);  // [i][j]
  Var cols = ad::concat_cols(col_sims);  // [i][j]
  Var text_to_video = ad::mean(ad::diagonal(ad::log_softmax_rows(rows)));
  Var video_to_text = ad::mean(ad::diagonal(ad::log_softmax_rows(ad::transpose(cols))));
  return ad::neg(ad::add(text_to_video, video_to_text));
}

double clip_consistency_loss(const Matrix& anchors, const std::vector<Matrix>& table) {
  ad::Tape tape;
  std::vector<Var> t;
  for (const Matrix& m : table) t.push_back(tape.constant(m));
  return clip_consistency_loss(tape.constant(anchors), t).scalar();
}

Var frame_relevance_loss(const Var& refined_video, const Var& anchor, const std::vector<int>& relevance) {
  const Index n = refined_video.rows();
  require(static_cast<Index>(relevance.size()) == n, "frame_relevance_loss: label length mismatch", ErrorCode::Shape);
  ad::Tape& tape = refined_video.tape();
  Matrix sign(n, 1), weight = Matrix::Zero(n, 1);
  Index valid = 0;
  for (Index i = 0; i < n; ++i) {
    const int c = relevance[static_cast<size_t>(i)];
    sign(i, 0) = c == 1 ? -1.0 : 1.0;
    if (c != kLabelPad) ++valid;
  }
  require(valid > 0, "frame_relevance_loss: no valid clips");
  for (Index i = 0; i < n; ++i) {
    if (relevance[static_cast<size_t>(i)] != kLabelPad) weight(i, 0) = 1.0 / static_cast<double>(valid);
  }
  // -log sigmoid(x) = softplus(-x), -log(1 - sigmoid(x)) = softplus(x)
  Var logits = ad::matmul_nt(refined_video, anchor);
  return ad::weighted_sum(ad::softplus(ad::hadamard(logits, tape.constant(sign))), weight);
}

// ---------------------------------------------------------------------------

Var margin_loss(const Var& saliency, const std::vector<int>& relevance, double margin, std::mt19937_64& rng) {
  const Index n = saliency.cols();
  require(static_cast<Index>(relevance.size()) == n, "margin_loss: label length mismatch", ErrorCode::Shape);
  const Matrix& s = saliency.value();
  std::vector<Index> inside, outside;
  for (Index i = 0; i < n; ++i) {
    const int c = relevance[static_cast<size_t>(i)];
    if (c == 1) inside.push_back(i);
    if (c == 0) outside.push_back(i);
  }
  ad::Tape& tape = saliency.tape();
  Var total = tape.constant_scalar(0.0);
  if (inside.empty()) return total;
  Index high = inside.front(), low = inside.front();
  for (Index i : inside) {
    if (s(0, i) > s(0, high)) high = i;
    if (s(0, i) < s(0, low)) low = i;
  }
  Var zero = tape.constant_scalar(0.0);
  auto hinge = [&](Index pos, Index neg) {
    return ad::maximum(zero, ad::add_scalar(ad::sub(ad::element(saliency, 0, neg), ad::element(saliency, 0, pos)),
                                            margin));
  };
  total = ad::add(total, hinge(high, low));
  if (!outside.empty()) {
    std::uniform_int_distribution<size_t> pick_in(0, inside.size() - 1), pick_out(0, outside.size() - 1);
    const Index t_in = inside[pick_in(rng)];
    const Index t_out = outside[pick_out(rng)];
    total = ad::add(total, hinge(t_in, t_out));
  }
  return total;
}

double margin_loss(const std::vector<double>& saliency, const std::vector<int>& relevance, double margin,
                   std::mt19937_64& rng) {
  ad::Tape tape;
  return margin_loss(row_vector(tape, saliency), relevance, margin, rng).scalar();
}

Var rank_contrastive_loss(const Var& saliency, const std::vector<double>& labels, const std::vector<int>& relevance,
                          double temperature) {
  const Index n = saliency.cols();
  require(temperature > 0.0, "rank_contrastive_loss: temperature must be positive");
  require(static_cast<Index>(relevance.size()) == n, "rank_contrastive_loss: relevance length mismatch",
          ErrorCode::Shape);
  ad::Tape& tape = saliency.tape();
  Var scaled = ad::scale(saliency, 1.0 / temperature);
  Var total = tape.constant_scalar(0.0);

  auto group = [&](const ad::Mask& pos, const ad::Mask& all) {
    // -log(sum_pos e^x / sum_all e^x)
    total = ad::add(total, ad::sub(ad::logsumexp(scaled, all), ad::logsumexp(scaled, pos)));
  };

  if (!labels.empty()) {
    require(static_cast<Index>(labels.size()) == n, "rank_contrastive_loss: label length mismatch", ErrorCode::Shape);
    std::set<double> levels;
    for (double l : labels) {
      if (l >= 0.0) levels.insert(l);
    }
    for (double level : levels) {
      ad::Mask pos(static_cast<size_t>(n), 0), all(static_cast<size_t>(n), 0);
      bool has_pos = false, has_neg = false;
      for (Index i = 0; i < n; ++i) {
        const double l = labels[static_cast<size_t>(i)];
        if (l < 0.0) continue;
        all[static_cast<size_t>(i)] = 1;
        if (l >= level) {
          pos[static_cast<size_t>(i)] = 1;
          has_pos = true;
        } else {
          has_neg = true;
        }
      }
      if (has_pos && has_neg) group(pos, all);
    }
  } else {
    ad::Mask pos(static_cast<size_t>(n), 0), all(static_cast<size_t>(n), 0);
    bool has_pos = false, has_neg = false;
    for (Index i = 0; i < n; ++i) {
      const int c = relevance[static_cast<size_t>(i)];
      if (c == kLabelPad) continue;
      all[static_cast<size_t>(i)] = 1;
      pos[static_cast<size_t>(i)] = c == 1;
      has_pos = has_pos || c == 1;
      has_neg = has_neg || c == 0;
    }
    if (has_pos && has_neg) group(pos, all);
  }
  return total;
}

double rank_contrastive_loss(const std::vector<double>& saliency, const std::vector<double>& labels,
                             const std::vector<int>& relevance, double temperature) {
  ad::Tape tape;
  return rank_contrastive_loss(row_vector(tape, saliency), labels, relevance, temperature).scalar();
}

// ---------------------------------------------------------------------------

double giou_1d(const Moment& a, const Moment& b) {
  const double as = a.center - a.width / 2.0, ae = a.center + a.width / 2.0;
  const double bs = b.center - b.width / 2.0, be = b.center + b.width / 2.0;
  const double inter = std::max(0.0, std::min(ae, be) - std::max(as, bs));
  const double uni = (ae - as) + (be - bs) - inter;
  const double hull = std::max(ae, be) - std::min(as, bs);
  if (hull <= 0.0) return 1.0;  // two identical points
  const double iou = uni > 0.0 ? inter / uni : 0.0;
  return iou - (hull - uni) / hull;
}

Var giou_1d(const Var& pred, const Moment& gt) {
  require(pred.rows() == 1 && pred.cols() == 2, "giou_1d: prediction must be 1 x 2", ErrorCode::Shape);
  ad::Tape& tape = pred.tape();
  Var c = ad::element(pred, 0, 0);
  Var w = ad::element(pred, 0, 1);
  Var half = ad::scale(w, 0.5);
  Var s = ad::sub(c, half);
  Var e = ad::add(c, half);
  Var gs = tape.constant_scalar(gt.center - gt.width / 2.0);
  Var ge = tape.constant_scalar(gt.center + gt.width / 2.0);
  Var inter = ad::relu(ad::sub(ad::minimum(e, ge), ad::maximum(s, gs)));
  Var uni = ad::sub(ad::add_scalar(w, gt.width), inter);
  Var hull = ad::sub(ad::maximum(e, ge), ad::minimum(s, gs));
  return ad::sub(ad::divide(inter, uni), ad::divide(ad::sub(hull, uni), hull));
}

double span_loss(const Moment& gt, const Moment& pred, const LossWeights& w) {
  return w.l1 * (std::abs(gt.center - pred.center) + std::abs(gt.width - pred.width)) +
         w.iou * (1.0 - giou_1d(gt, pred));
}

Var span_loss(const Var& pred, const Moment& gt, const LossWeights& w) {
  ad::Tape& tape = pred.tape();
  Matrix g(1, 2);
  g << gt.center, gt.width;
  Var l1 = ad::sum(ad::abs(ad::sub(pred, tape.constant(g))));
  Var giou_term = ad::add_scalar(ad::neg(giou_1d(pred, gt)), 1.0);
  return ad::add(ad::scale(l1, w.l1), ad::scale(giou_term, w.iou));
}

// Shortest augmenting path with row/column potentials, O(n^2 m).
std::vector<int> linear_sum_assignment(const Matrix& cost) {
  const Index n = cost.rows();
  const Index m = cost.cols();
  require(n <= m, "linear_sum_assignment: more rows than columns");
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n + 1), 0.0), v(static_cast<size_t>(m + 1), 0.0);
  std::vector<Index> p(static_cast<size_t>(m + 1), 0), way(static_cast<size_t>(m + 1), 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<size_t>(m + 1), inf);
    std::vector<bool> used(static_cast<size_t>(m + 1), false);
    do {
      used[static_cast<size_t>(j0)] = true;
      const Index i0 = p[static_cast<size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= m; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (Index j = 0; j <= m; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(static_cast<size_t>(n), -1);
  for (Index j = 1; j <= m; ++j) {
    if (p[static_cast<size_t>(j)] != 0) assignment[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = static_cast<int>(j - 1);
  }
  return assignment;
}

Matrix matching_cost(const std::vector<Moment>& gt, const MomentPredictionSet& preds, const LossWeights& w) {
  Matrix cost(static_cast<Index>(gt.size()), static_cast<Index>(preds.size()));
  for (size_t i = 0; i < gt.size(); ++i) {
    for (size_t j = 0; j < preds.size(); ++j) {
      cost(static_cast<Index>(i), static_cast<Index>(j)) = -w.cls * preds.fg_prob[j] + span_loss(gt[i], preds.spans[j], w);
    }
  }
  return cost;
}

MatchResult hungarian_match(const std::vector<Moment>& gt, const MomentPredictionSet& preds, const LossWeights& w) {
  require(gt.size() <= preds.size(), "hungarian_match: more ground-truth moments than predictions");
  return MatchResult{linear_sum_assignment(matching_cost(gt, preds, w))};
}

Var moment_retrieval_loss(const Var& spans, const Var& class_log_probs, const std::vector<Moment>& gt,
                          const MatchResult& match, const LossWeights& w) {
  const Index m = spans.rows();
  require(class_log_probs.rows() == m && class_log_probs.cols() == 2, "moment_retrieval_loss: class shape",
          ErrorCode::Shape);
  require(match.assignment.size() == gt.size(), "moment_retrieval_loss: match size mismatch");
  Matrix cls_weight = Matrix::Zero(m, 2);
  std::vector<bool> matched(static_cast<size_t>(m), false);
  for (int q : match.assignment) {
    require(q >= 0 && q < m, "moment_retrieval_loss: assignment out of range");
    matched[static_cast<size_t>(q)] = true;
  }
  for (Index q = 0; q < m; ++q) cls_weight(q, matched[static_cast<size_t>(q)] ? 0 : 1) = -w.cls;
  Var total = ad::weighted_sum(class_log_probs, cls_weight);
  for (size_t i = 0; i < gt.size(); ++i) {
    total = ad::add(total, span_loss(ad::slice_rows(spans, match.assignment[i], 1), gt[i], w));
  }
  return total;
}

double total_loss(const LossComponents& c, const LossWeights& w) {
  return (c.margin + c.rank) + c.mr + w.clip * c.clip + w.frame * c.frame;
}

Var total_loss(const Var& margin, const Var& rank, const Var& mr, const Var& clip, const Var& frame,
               const LossWeights& w) {
  Var hd = ad::add(margin, rank);
  return ad::add(ad::add(ad::add(hd, mr), ad::scale(clip, w.clip)), ad::scale(frame, w.frame));
}

}  // namespace vtg
