#pragma once

// Moment retrieval and highlight detection metrics.
//
// Spans here may be in any consistent unit (normalised or seconds). AP is the
// all-points interpolated form: precision is replaced by its running maximum
// from the right before summing over recall steps.

#include "vtg/core_types.hpp"

#include <map>
#include <vector>

namespace vtg {

struct ScoredSpan {
  Span span;
  double score = 0.0;
};

// Per-sample prediction record as consumed by the MR metrics. Order is
// irrelevant: top-1 is the highest score, earliest entry on ties.
struct MomentQuery {
  std::vector<ScoredSpan> predictions;
  std::vector<Span> ground_truth;
};

struct HighlightQuery {
  std::vector<double> scores;  // predicted saliency per clip
  std::vector<double> labels;  // mean annotator score per clip
};

struct MRResult {
  std::map<double, double> r1_at;
  std::map<double, double> map_at;
  double map_avg = 0.0;
};

struct HDResult {
  double map = 0.0;
  double hit_at_1 = 0.0;
  size_t evaluated = 0;
};

inline constexpr double kVeryGood = 4.0;

double iou_1d(const Span& a, const Span& b);

// The IoU sweep 0.5, 0.55, ..., 0.95.
std::vector<double> iou_sweep();

double recall_at_1(const std::vector<MomentQuery>& queries, double threshold);
// AP of one sample's ranked predictions against its GTs at one IoU threshold,
// with greedy one-to-one matching in score order.
double average_precision_moments(const MomentQuery& query, double threshold);
std::map<double, double> map_moments(const std::vector<MomentQuery>& queries, const std::vector<double>& thresholds);
MRResult evaluate_moments(const std::vector<MomentQuery>& queries);

// AP of binary relevances ranked by score (ties by clip index).
double average_precision(const std::vector<double>& scores, const std::vector<int>& relevant);
// Mean AP over samples that have at least one clip labelled >= kVeryGood.
double hd_map(const std::vector<HighlightQuery>& queries);
// Fraction of samples whose top-scored clip (lowest index on ties) has label
// >= kVeryGood. Samples without such clips still count.
double hit_at_1(const std::vector<HighlightQuery>& queries);
HDResult evaluate_highlights(const std::vector<HighlightQuery>& queries);

// Thin extension: mean top-1 IoU (the usual TACoS-style summary).
double mean_iou_at_1(const std::vector<MomentQuery>& queries);

}  // namespace vtg
