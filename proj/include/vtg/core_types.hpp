#pragma once

#include "vtg/autodiff.hpp"

#include <optional>
#include <string>
#include <vector>

namespace vtg {

using ad::Index;
using ad::Mask;
using ad::Matrix;

// Padding value for per-clip label vectors; never read by any loss.
inline constexpr int kLabelPad = -1;

// A length x dim sequence of embeddings with a validity mask.
struct FeatureSequence {
  Matrix embeddings;
  Mask mask;

  FeatureSequence() = default;
  explicit FeatureSequence(Matrix emb);
  FeatureSequence(Matrix emb, Mask m);

  Index length() const { return embeddings.rows(); }
  Index dim() const { return embeddings.cols(); }
  Index valid_count() const { return ad::count_valid(mask); }
  // Throws unless length >= 1, dim >= 1, mask sized correctly with >= 1 valid entry.
  void validate(const char* what = "sequence") const;
  // Rows whose mask is set, in order.
  Matrix valid_rows() const;
};

// Temporal span in units of the video duration.
struct Moment {
  double center = 0.0;
  double width = 0.0;
};

struct Span {
  double start = 0.0;
  double end = 0.0;
};

Moment span_to_center_width(double start, double end);
Span center_width_to_span(const Moment& m);
void validate_moment(const Moment& m);

using SaliencyVector = std::vector<double>;

struct RelevanceLabels {
  std::vector<int> indicators;
};

// Clip i (of n) is relevant iff its normalised midpoint (i + 0.5)/n lies
// inside some moment's [start, end].
RelevanceLabels relevance_from_moments(const std::vector<Moment>& moments, Index clip_count);

struct GroundingSample {
  std::string qid;
  std::string vid;
  std::string query;
  FeatureSequence video;
  FeatureSequence text;
  std::vector<Moment> gt_moments;
  // Ground-truth windows in seconds, as given by the source (kept verbatim so
  // metrics computed from files and from memory see identical numbers).
  std::vector<Span> gt_windows;
  // Mean annotator score per clip in [0, 4]; absent when the source has no
  // highlight annotation.
  std::optional<std::vector<double>> saliency_labels;
  RelevanceLabels relevance;
  double duration = 0.0;
};

struct MomentPredictionSet {
  std::vector<Moment> spans;
  std::vector<double> fg_prob;

  size_t size() const { return spans.size(); }
};

// Samples padded to common lengths. Label vectors use kLabelPad past the end.
struct Batch {
  std::vector<FeatureSequence> video;
  std::vector<FeatureSequence> text;
  std::vector<std::vector<int>> relevance;
  std::vector<std::vector<double>> saliency;  // empty inner vector when absent
  std::vector<const GroundingSample*> samples;
  Index max_video = 0;
  Index max_text = 0;

  size_t size() const { return video.size(); }
};

Batch collate(const std::vector<const GroundingSample*>& samples);
// Mask-select every padded sequence back to its valid rows.
std::vector<std::pair<Matrix, Matrix>> uncollate(const Batch& batch);

}  // namespace vtg
