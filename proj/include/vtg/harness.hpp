#pragma once

// Training, evaluation, prediction files, ablation grids and plots.

#include "vtg/config.hpp"
#include "vtg/metrics.hpp"
#include "vtg/model.hpp"

#include <json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace vtg {

// ---- data splits ----

// Synthetic data: one generated pool, first n_train samples are "train", the
// rest "val". File data: one manifest per split name.
std::vector<GroundingSample> load_split(const RunConfig& cfg, const std::string& split);

// ---- optimisation ----

class AdamW {
 public:
  AdamW(std::vector<ad::Parameter*> params, const OptimConfig& cfg);
  // Decoupled weight decay on parameters flagged for decay.
  void step(double lr);
  long steps() const { return t_; }

 private:
  std::vector<ad::Parameter*> params_;
  std::vector<Matrix> m_, v_;
  OptimConfig cfg_;
  long t_ = 0;
};

// Rescales gradients so their global L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_grad_norm(const std::vector<ad::Parameter*>& params, double max_norm);

// Learning rate in effect for a 1-based epoch.
double learning_rate(const OptimConfig& cfg, int epoch);

// ---- checkpoints ----

struct Checkpoint {
  RunConfig config;
  int epoch = 0;
  Index video_dim = 0;
  Index text_dim = 0;
  nlohmann::json metrics;
};

void save_checkpoint(const std::string& path, const GroundingModel& model, const RunConfig& cfg, int epoch,
                     const nlohmann::json& metrics);
// Rebuilds the model from the stored config and restores every parameter.
std::unique_ptr<GroundingModel> load_checkpoint(const std::string& path, Checkpoint* info = nullptr);

// ---- inference and evaluation ----

enum class EvalMode { Standard, GateSaliency };
EvalMode parse_eval_mode(const std::string& name);

// One prediction-file record. Spans and scores are stored exactly as they
// are written, so file and memory paths see the same numbers.
struct PredictionRecord {
  std::string qid;
  std::string vid;
  std::string query;
  double duration = 0.0;
  std::vector<ScoredSpan> windows;  // seconds, ranked
  std::vector<double> saliency;
  std::vector<Span> gt_windows;     // seconds
  std::optional<std::vector<double>> saliency_labels;
};

std::vector<PredictionRecord> predict_records(const GroundingModel& model, const std::vector<GroundingSample>& samples,
                                              const EvalConfig& eval, EvalMode mode);

// Metric report; HD fields are omitted when no record carries labels, MR
// fields in gate_saliency mode.
nlohmann::json evaluate_records(const std::vector<PredictionRecord>& records, EvalMode mode);

std::vector<MomentQuery> moment_queries(const std::vector<PredictionRecord>& records);
std::vector<HighlightQuery> highlight_queries(const std::vector<PredictionRecord>& records);

nlohmann::json record_to_json(const PredictionRecord& r);
PredictionRecord record_from_json(const nlohmann::json& j);
void write_predictions(const std::string& path, const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_predictions(const std::string& path);

nlohmann::json evaluate(const GroundingModel& model, const RunConfig& cfg, const std::string& split, EvalMode mode);

// ---- training ----

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  LossComponents loss;
  double total = 0.0;
  double grad_norm = 0.0;
  double seconds = 0.0;
  nlohmann::json val;  // empty when not evaluated this epoch

  nlohmann::json to_json() const;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_map_avg = -1.0;
  nlohmann::json best_val;
  std::string best_checkpoint;
  std::string last_checkpoint;
};

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  bool write_files = true;
};

// Optimises the total loss; writes train_log.jsonl, best.ckpt, last.ckpt and
// periodic checkpoints under cfg.train.out_dir. Throws NonFinite naming the
// first bad loss component.
TrainResult train(const RunConfig& cfg, const TrainHooks& hooks = {});

// ---- ablation ----

struct AblationPoint {
  nlohmann::json overrides;  // dotted key -> value
};

struct AblationGrid {
  std::vector<AblationPoint> points;
  std::vector<std::uint64_t> seeds;
};

// {"grid": {key: [values...]}} expands to the cartesian product;
// {"points": [{key: value}, ...]} lists points explicitly; both may be given.
// "seeds" defaults to [config seed]. Unknown keys are rejected here.
AblationGrid parse_grid(const nlohmann::json& j, const RunConfig& base);
AblationGrid load_grid(const std::string& path, const RunConfig& base);

// Trains every point x seed, returns the aggregated table and writes
// ablation.json and ablation.md under base.train.out_dir.
nlohmann::json ablate(const RunConfig& base, const AblationGrid& grid,
                      const std::function<void(const std::string&)>& progress = {});
std::string ablation_markdown(const nlohmann::json& table);

// ---- plots ----

// One SVG per record: saliency curve, ground-truth windows, top-k predicted
// windows, x axis spanning [0, duration]. Returns the files written.
std::vector<std::string> plot_predictions(const std::string& prediction_file, const std::string& out_dir,
                                          const std::vector<std::string>& qids = {}, int top_k = 3);
std::string render_svg(const PredictionRecord& record, int top_k);

}  // namespace vtg
