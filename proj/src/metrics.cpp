#include "vtg/metrics.hpp"

#include "vtg/error.hpp"

#include <algorithm>
#include <numeric>

namespace vtg {

double iou_1d(const Span& a, const Span& b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = (a.end - a.start) + (b.end - b.start) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<double> iou_sweep() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

namespace {

// Highest score, earliest entry on ties.
const Span& top_prediction(const MomentQuery& q) {
  size_t best = 0;
  for (size_t i = 1; i < q.predictions.size(); ++i) {
    if (q.predictions[i].score > q.predictions[best].score) best = i;
  }
  return q.predictions[best].span;
}

}  // namespace

double recall_at_1(const std::vector<MomentQuery>& queries, double threshold) {
  if (queries.empty()) return 0.0;
  size_t hits = 0;
  for (const MomentQuery& q : queries) {
    require(!q.predictions.empty(), "recall_at_1: sample without predictions");
    const Span& top = top_prediction(q);
    for (const Span& gt : q.ground_truth) {
      if (iou_1d(top, gt) >= threshold) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

namespace {

// Interpolated all-points AP from a ranked hit list.
double interpolated_ap(const std::vector<int>& hits, size_t positives) {
  if (positives == 0) return 0.0;
  const size_t n = hits.size();
  std::vector<double> precision(n), recall(n);
  size_t tp = 0;
  for (size_t k = 0; k < n; ++k) {
    tp += static_cast<size_t>(hits[k]);
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tp) / static_cast<double>(positives);
  }
  for (size_t k = n; k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (size_t k = 0; k < n; ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

}  // namespace

double average_precision_moments(const MomentQuery& query, double threshold) {
  if (query.ground_truth.empty()) return 0.0;
  std::vector<size_t> order(query.predictions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return query.predictions[a].score > query.predictions[b].score;
  });
  std::vector<bool> taken(query.ground_truth.size(), false);
  std::vector<int> hits;
  for (size_t idx : order) {
    const Span& p = query.predictions[idx].span;
    // best still-unmatched GT above threshold
    double best = -1.0;
    size_t best_gt = 0;
    for (size_t g = 0; g < query.ground_truth.size(); ++g) {
      if (taken[g]) continue;
      const double iou = iou_1d(p, query.ground_truth[g]);
      if (iou >= threshold && iou > best) {
        best = iou;
        best_gt = g;
      }
    }
    if (best >= 0.0) {
      taken[best_gt] = true;
      hits.push_back(1);
    } else {
      hits.push_back(0);
    }
  }
  return interpolated_ap(hits, query.ground_truth.size());
}

std::map<double, double> map_moments(const std::vector<MomentQuery>& queries, const std::vector<double>& thresholds) {
  std::map<double, double> out;
  for (double t : thresholds) {
    double s = 0.0;
    for (const MomentQuery& q : queries) s += average_precision_moments(q, t);
    out[t] = queries.empty() ? 0.0 : s / static_cast<double>(queries.size());
  }
  return out;
}

MRResult evaluate_moments(const std::vector<MomentQuery>& queries) {
  MRResult r;
  r.r1_at[0.5] = recall_at_1(queries, 0.5);
  r.r1_at[0.7] = recall_at_1(queries, 0.7);
  const std::vector<double> sweep = iou_sweep();
  std::map<double, double> m = map_moments(queries, sweep);
  double s = 0.0;
  for (double t : sweep) s += m[t];
  r.map_at = std::move(m);
  r.map_avg = s / static_cast<double>(sweep.size());
  return r;
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& relevant) {
  require(scores.size() == relevant.size(), "average_precision: size mismatch");
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  std::vector<int> hits;
  size_t positives = 0;
  for (size_t i : order) {
    hits.push_back(relevant[i] ? 1 : 0);
    positives += relevant[i] ? 1 : 0;
  }
  return interpolated_ap(hits, positives);
}

namespace {

std::vector<int> very_good(const HighlightQuery& q) {
  require(q.scores.size() == q.labels.size(), "highlight metrics: score/label length mismatch");
  std::vector<int> rel(q.labels.size());
  for (size_t i = 0; i < rel.size(); ++i) rel[i] = q.labels[i] >= kVeryGood ? 1 : 0;
  return rel;
}

}  // namespace

double hd_map(const std::vector<HighlightQuery>& queries) {
  double s = 0.0;
  size_t n = 0;
  for (const HighlightQuery& q : queries) {
    std::vector<int> rel = very_good(q);
    if (std::find(rel.begin(), rel.end(), 1) == rel.end()) continue;
    s += average_precision(q.scores, rel);
    ++n;
  }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

double hit_at_1(const std::vector<HighlightQuery>& queries) {
  if (queries.empty()) return 0.0;
  size_t hits = 0;
  for (const HighlightQuery& q : queries) {
    std::vector<int> rel = very_good(q);
    if (q.scores.empty()) continue;
    size_t best = 0;
    for (size_t i = 1; i < q.scores.size(); ++i) {
      if (q.scores[i] > q.scores[best]) best = i;
    }
    hits += static_cast<size_t>(rel[best]);
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

HDResult evaluate_highlights(const std::vector<HighlightQuery>& queries) {
  HDResult r;
  r.map = hd_map(queries);
  r.hit_at_1 = hit_at_1(queries);
  r.evaluated = queries.size();
  return r;
}

double mean_iou_at_1(const std::vector<MomentQuery>& queries) {
  if (queries.empty()) return 0.0;
  double s = 0.0;
  for (const MomentQuery& q : queries) {
    double best = 0.0;
    if (!q.predictions.empty()) {
      for (const Span& gt : q.ground_truth) best = std::max(best, iou_1d(top_prediction(q), gt));
    }
    s += best;
  }
  return s / static_cast<double>(queries.size());
}

}  // namespace vtg
