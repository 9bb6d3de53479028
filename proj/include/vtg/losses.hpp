#pragma once

// Training objectives: alignment losses between the text anchor and the
// video, highlight ranking losses, and set-prediction losses for moments.
//
// Every loss has a tape form (used for training and gradient checks) and,
// where it helps testing, a value form on plain numbers.

#include "vtg/core_types.hpp"
#include "vtg/nn.hpp"

#include <random>
#include <vector>

namespace vtg {

using ad::Var;

struct LossWeights {
  double l1 = 10.0;
  double iou = 1.0;
  double cls = 4.0;
  double clip = 1.0;
  double frame = 1.0;
  double margin = 0.2;      // hinge margin
  double temperature = 0.5;  // rank-aware contrastive temperature
};

struct MatchResult {
  // assignment[i] = prediction index matched to ground-truth moment i
  std::vector<int> assignment;
};

// ---- alignment ----

// Symmetric InfoNCE between anchors (B x d) and the cross table where
// table[j] is B x d with row i = psi(anchor_i, video_j).
Var clip_consistency_loss(const Var& anchors, const std::vector<Var>& table);
double clip_consistency_loss(const Matrix& anchors, const std::vector<Matrix>& table);

// Mean binary cross-entropy over valid clips between sigmoid(v_i . anchor)
// and the relevance indicator. Entries with label kLabelPad are skipped.
Var frame_relevance_loss(const Var& refined_video, const Var& anchor, const std::vector<int>& relevance);

// ---- highlight ----

// Hinge on (high, low) inside the ground truth and (in, out) across its
// boundary. high/low are the best/worst scored in-moment clips; in/out are
// drawn uniformly with `rng`. Terms without the needed clips drop out.
Var margin_loss(const Var& saliency, const std::vector<int>& relevance, double margin, std::mt19937_64& rng);
double margin_loss(const std::vector<double>& saliency, const std::vector<int>& relevance, double margin,
                   std::mt19937_64& rng);

// Rank-aware contrastive loss. With labels, one group per occupied label
// value l (positives >= l, negatives < l); without (empty `labels`), one group
// with in-moment clips as positives. Negative labels mark padding.
Var rank_contrastive_loss(const Var& saliency, const std::vector<double>& labels, const std::vector<int>& relevance,
                          double temperature);
double rank_contrastive_loss(const std::vector<double>& saliency, const std::vector<double>& labels,
                             const std::vector<int>& relevance, double temperature);

// ---- moment retrieval ----

// Generalised IoU on the raw intervals [c - w/2, c + w/2].
double giou_1d(const Moment& a, const Moment& b);
// pred: 1 x 2 (center, width)
Var giou_1d(const Var& pred, const Moment& gt);

double span_loss(const Moment& gt, const Moment& pred, const LossWeights& w);
Var span_loss(const Var& pred, const Moment& gt, const LossWeights& w);

// Minimum-cost assignment of every row to a distinct column; rows <= cols.
std::vector<int> linear_sum_assignment(const Matrix& cost);

// Cost of pairing GT i with prediction j:
// -cls * fg_prob_j + l1 * |m_i - m_j|_1 + iou * (1 - gIoU).
Matrix matching_cost(const std::vector<Moment>& gt, const MomentPredictionSet& preds, const LossWeights& w);
MatchResult hungarian_match(const std::vector<Moment>& gt, const MomentPredictionSet& preds, const LossWeights& w);

// spans: M x 2, class_log_probs: M x 2 (col 0 foreground).
Var moment_retrieval_loss(const Var& spans, const Var& class_log_probs, const std::vector<Moment>& gt,
                          const MatchResult& match, const LossWeights& w);

// ---- total ----

struct LossComponents {
  double margin = 0.0;
  double rank = 0.0;
  double mr = 0.0;
  double clip = 0.0;
  double frame = 0.0;
};

double total_loss(const LossComponents& c, const LossWeights& w);
Var total_loss(const Var& margin, const Var& rank, const Var& mr, const Var& clip, const Var& frame,
               const LossWeights& w);

}  // namespace vtg
