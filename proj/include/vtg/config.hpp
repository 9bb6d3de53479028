#pragma once

// Run configuration: a JSON tree with dotted-key overrides.

#include "vtg/cross_modal.hpp"
#include "vtg/data.hpp"
#include "vtg/losses.hpp"
#include "vtg/text_anchor.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace vtg {

struct ModelConfig {
  int dim = 256;
  int heads = 8;              // encoder, decoder and anchor pooling
  int interaction_heads = 8;  // gated cross-attention layers
  int interaction_layers = 2;
  int encoder_layers = 3;
  int decoder_layers = 3;
  int queries = 10;
  int ffn_mult = 4;
  double dropout = 0.1;
  AnchorMethod anchor = AnchorMethod::Mean;
  GateSwitches gates;
  bool saliency_vector_weights = false;
};

struct OptimConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  int lr_drop_epoch = 100;
  double lr_drop_factor = 0.1;
  double grad_clip = 0.1;
  int batch_size = 32;
  int epochs = 200;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | files
  SyntheticConfig synthetic;
  int n_train = 800;
  int n_val = 200;
  // Used when source == files, keyed by split name.
  std::map<std::string, DatasetManifest> manifests;
};

struct TrainConfig {
  int checkpoint_every = 0;  // 0 = only the best and the last
  int eval_every = 1;
  // Stop once validation reaches both targets (<= 0 disables each).
  double stop_r1_at_05 = 0.0;
  double stop_hd_map = 0.0;
  std::string out_dir = "runs/default";
};

struct EvalConfig {
  int top_k = 0;  // 0 keeps every query
  bool nms = false;
  double nms_iou = 0.7;
};

struct RunConfig {
  ModelConfig model;
  LossWeights loss;
  OptimConfig optim;
  DataConfig data;
  TrainConfig train;
  EvalConfig eval;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
void save_config(const std::string& path, const RunConfig& cfg);

// Every dotted key addressable by overrides, e.g. "model.gates".
std::vector<std::string> config_keys();
bool is_config_key(const std::string& dotted);
// Sets one dotted key; throws on unknown keys or ill-typed values.
RunConfig apply_override(const RunConfig& cfg, const std::string& dotted, const nlohmann::json& value);

}  // namespace vtg
