#pragma once

// Planted-signal synthetic datasets and loaders for pre-extracted features in
// the QVHighlights file convention.

#include "vtg/core_types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace vtg {

// ---- synthetic generator ----

struct IntRange {
  int min = 0;
  int max = 0;
};

struct SyntheticConfig {
  int n_samples = 100;
  IntRange video_len{40, 40};
  IntRange text_len{4, 8};
  int d_v = 64;
  int d_t = 32;
  double signal_strength = 5.0;
  double noise_std = 0.5;
  IntRange moments_per_video{1, 2};
  double distractor_rate = 0.1;
  // Expected fraction of clips inside a moment.
  double coverage = 0.3;
  double clip_duration = 2.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticDataset {
  std::vector<GroundingSample> samples;
  // Fixed map from query space to clip space (d_v x d_t), already scaled so
  // that projection * q has unit-variance entries.
  Matrix projection;
  // Latent query per sample (1 x d_t).
  std::vector<Matrix> latents;
};

// Per sample: a latent q ~ N(0, I); text tokens q + noise; clips inside a
// moment signal * P q + noise; other clips noise, or with probability
// distractor_rate signal * P q' + noise for an unrelated q'. Saliency labels
// are 4 inside and 0 outside. Moments are aligned to clip boundaries and
// separated by at least one clip.
SyntheticDataset generate_synthetic(const SyntheticConfig& cfg);

// ---- annotations ----

struct AnnotationRecord {
  std::string qid;
  bool qid_is_number = false;
  std::string query;
  std::string vid;
  double duration = 0.0;
  std::vector<Span> relevant_windows;  // seconds
  std::optional<std::vector<int>> relevant_clip_ids;
  // One entry per annotated clip: a list of annotator scores. Aligned with
  // relevant_clip_ids when present, otherwise with every clip.
  std::optional<std::vector<std::vector<double>>> saliency_scores;

  bool has_saliency() const { return saliency_scores.has_value(); }
  std::vector<Moment> moments() const;
  // Mean annotator score per clip; clips without annotation score 0.
  std::optional<std::vector<double>> saliency_per_clip(Index clip_count) const;
};

AnnotationRecord parse_annotation(const std::string& line, size_t line_number = 0);
std::vector<AnnotationRecord> load_annotations(const std::string& path);
std::string serialize_annotation(const AnnotationRecord& record);
void save_annotations(const std::string& path, const std::vector<AnnotationRecord>& records);

// ---- feature files ----

// Little-endian: "VTGF", uint32 version (1), uint64 rows, uint64 cols, then
// rows*cols float32 in row-major order.
void write_feature_bin(const std::string& path, const Matrix& m);
Matrix read_feature_bin(const std::string& path);

// NumPy .npy (float32/float64, C order) and .npz (stored or deflated). Writers
// emit float32.
void write_npy(const std::string& path, const Matrix& m);
Matrix read_npy(const std::string& path);
void write_npz(const std::string& path, const std::vector<std::pair<std::string, Matrix>>& arrays, bool compress);
// `key` selects the array; empty means "features" if present, else the first.
Matrix read_npz(const std::string& path, const std::string& key = "");

void l2_normalize_rows(Matrix& m);

// ---- manifests ----

struct DatasetManifest {
  std::string annotation_path;
  std::string video_feature_dir;
  std::string text_feature_dir;
  double clip_duration = 2.0;
  Index video_dim = 0;  // 0 = not checked
  Index text_dim = 0;
  bool l2_normalize = true;
  std::string npz_key;

  // Relative paths are resolved against VTG_DATA_ROOT when it is set.
  std::string resolve(const std::string& path) const;
};

enum class FeatureKind { Video, Text };

// Looks for {id}.bin, then {id}.npy, then {id}.npz in the kind's directory.
FeatureSequence load_features(const DatasetManifest& manifest, const std::string& id, FeatureKind kind);

GroundingSample make_sample(const AnnotationRecord& record, FeatureSequence video, FeatureSequence text);

struct LoadReport {
  std::vector<GroundingSample> samples;
  std::vector<std::string> errors;  // one per skipped record
};

LoadReport load_dataset(const DatasetManifest& manifest);

}  // namespace vtg
