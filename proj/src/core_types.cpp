#include "vtg/core_types.hpp"

#include "vtg/error.hpp"

#include <algorithm>
#include <cmath>

namespace vtg {

FeatureSequence::FeatureSequence(Matrix emb) : embeddings(std::move(emb)), mask(ad::full_mask(embeddings.rows())) {}

FeatureSequence::FeatureSequence(Matrix emb, Mask m) : embeddings(std::move(emb)), mask(std::move(m)) {}

void FeatureSequence::validate(const char* what) const {
  require(length() >= 1, std::string(what) + ": empty sequence", ErrorCode::Shape);
  require(dim() >= 1, std::string(what) + ": zero-width embeddings", ErrorCode::Shape);
  require(static_cast<Index>(mask.size()) == length(), std::string(what) + ": mask length mismatch",
          ErrorCode::Shape);
  require(valid_count() >= 1, std::string(what) + ": every position is masked");
}

Matrix FeatureSequence::valid_rows() const {
  Matrix out(valid_count(), dim());
  Index k = 0;
  for (Index i = 0; i < length(); ++i) {
    if (mask[static_cast<size_t>(i)]) out.row(k++) = embeddings.row(i);
  }
  return out;
}

Moment span_to_center_width(double start, double end) {
  require(std::isfinite(start) && std::isfinite(end), "span endpoints must be finite");
  require(start >= 0.0 && end <= 1.0, "span endpoints must lie in [0,1]");
  require(start < end, "span start must precede end");
  return Moment{(start + end) / 2.0, end - start};
}

Span center_width_to_span(const Moment& m) {
  return Span{std::clamp(m.center - m.width / 2.0, 0.0, 1.0), std::clamp(m.center + m.width / 2.0, 0.0, 1.0)};
}

void validate_moment(const Moment& m) {
  require(m.center >= 0.0 && m.center <= 1.0, "moment center outside [0,1]");
  require(m.width > 0.0 && m.width <= 1.0, "moment width outside (0,1]");
}

RelevanceLabels relevance_from_moments(const std::vector<Moment>& moments, Index clip_count) {
  RelevanceLabels out;
  out.indicators.assign(static_cast<size_t>(clip_count), 0);
  for (Index i = 0; i < clip_count; ++i) {
    const double mid = (static_cast<double>(i) + 0.5) / static_cast<double>(clip_count);
    for (const Moment& m : moments) {
      const double lo = m.center - m.width / 2.0;
      const double hi = m.center + m.width / 2.0;
      if (mid >= lo && mid <= hi) {
        out.indicators[static_cast<size_t>(i)] = 1;
        break;
      }
    }
  }
  return out;
}

Batch collate(const std::vector<const GroundingSample*>& samples) {
  require(!samples.empty(), "collate: empty batch");
  Batch b;
  for (const GroundingSample* s : samples) {
    b.max_video = std::max(b.max_video, s->video.length());
    b.max_text = std::max(b.max_text, s->text.length());
  }
  for (const GroundingSample* s : samples) {
    s->video.validate("video");
    s->text.validate("text");
    auto pad = [](const FeatureSequence& seq, Index len) {
      FeatureSequence out;
      out.embeddings = Matrix::Zero(len, seq.dim());
      out.embeddings.topRows(seq.length()) = seq.embeddings;
      out.mask.assign(static_cast<size_t>(len), 0);
      std::copy(seq.mask.begin(), seq.mask.end(), out.mask.begin());
      return out;
    };
    b.video.push_back(pad(s->video, b.max_video));
    b.text.push_back(pad(s->text, b.max_text));

    std::vector<int> rel(static_cast<size_t>(b.max_video), kLabelPad);
    for (size_t i = 0; i < s->relevance.indicators.size() && i < rel.size(); ++i) {
      if (s->video.mask[i]) rel[i] = s->relevance.indicators[i];
    }
    b.relevance.push_back(std::move(rel));

    std::vector<double> sal;
    if (s->saliency_labels) {
      sal.assign(static_cast<size_t>(b.max_video), static_cast<double>(kLabelPad));
      for (size_t i = 0; i < s->saliency_labels->size() && i < sal.size(); ++i) {
        if (s->video.mask[i]) sal[i] = (*s->saliency_labels)[i];
      }
    }
    b.saliency.push_back(std::move(sal));
    b.samples.push_back(s);
  }
  return b;
}

std::vector<std::pair<Matrix, Matrix>> uncollate(const Batch& batch) {
  std::vector<std::pair<Matrix, Matrix>> out;
  for (size_t i = 0; i < batch.size(); ++i) {
    out.emplace_back(batch.video[i].valid_rows(), batch.text[i].valid_rows());
  }
  return out;
}

}  // namespace vtg
