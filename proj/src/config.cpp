#include "vtg/config.hpp"

#include "vtg/error.hpp"

#include <algorithm>
#include <fstream>

namespace vtg {

using json = nlohmann::json;

void RunConfig::validate() const {
  require(model.dim >= 1 && model.heads >= 1 && model.dim % model.heads == 0,
          "config: model.heads must divide model.dim");
  require(model.interaction_heads >= 1 && model.dim % model.interaction_heads == 0,
          "config: interaction.heads must divide model.dim");
  require(model.interaction_layers >= 1, "config: interaction.layers must be >= 1");
  require(model.encoder_layers >= 0, "config: encoder.layers must be >= 0");
  require(model.decoder_layers >= 1, "config: decoder.layers must be >= 1");
  require(model.queries >= 1, "config: decoder.queries must be >= 1");
  require(model.ffn_mult >= 1, "config: model.ffn_mult must be >= 1");
  require(model.dropout >= 0.0 && model.dropout < 1.0, "config: model.dropout must be in [0,1)");
  require(optim.lr > 0.0, "config: optim.lr must be positive");
  require(optim.batch_size >= 1, "config: optim.batch_size must be >= 1");
  require(optim.epochs >= 1, "config: optim.epochs must be >= 1");
  require(optim.grad_clip >= 0.0, "config: optim.grad_clip must be >= 0");
  require(optim.lr_drop_factor > 0.0, "config: optim.lr_drop_factor must be positive");
  require(loss.temperature > 0.0, "config: loss.temperature must be positive");
  require(loss.clip >= 0.0 && loss.frame >= 0.0 && loss.l1 >= 0.0 && loss.iou >= 0.0 && loss.cls >= 0.0,
          "config: loss weights must be non-negative");
  require(data.source == "synthetic" || data.source == "files", "config: data.source must be synthetic or files");
  if (data.source == "synthetic") {
    require(data.n_train >= 1 && data.n_val >= 1, "config: data.n_train and data.n_val must be >= 1");
    SyntheticConfig s = data.synthetic;
    s.n_samples = data.n_train + data.n_val;
    s.validate();
  } else {
    require(data.manifests.count("train") == 1, "config: data.manifests.train is required");
  }
  require(eval.nms_iou > 0.0 && eval.nms_iou <= 1.0, "config: eval.nms_iou must be in (0,1]");
}

namespace {

json range_json(const IntRange& r) { return json::array({r.min, r.max}); }

IntRange range_from(const json& j) {
  require(j.is_array() && j.size() == 2, "config: ranges are [min, max]");
  return IntRange{j[0].get<int>(), j[1].get<int>()};
}

json manifest_json(const DatasetManifest& m) {
  return json{{"annotations", m.annotation_path},   {"video_features", m.video_feature_dir},
              {"text_features", m.text_feature_dir}, {"clip_duration", m.clip_duration},
              {"video_dim", m.video_dim},            {"text_dim", m.text_dim},
              {"l2_normalize", m.l2_normalize},      {"npz_key", m.npz_key}};
}

DatasetManifest manifest_from(const json& j) {
  DatasetManifest m;
  for (auto it = j.begin(); it != j.end(); ++it) {
    require(manifest_json(m).contains(it.key()), "config: unknown manifest key " + it.key());
  }
  m.annotation_path = j.value("annotations", m.annotation_path);
  m.video_feature_dir = j.value("video_features", m.video_feature_dir);
  m.text_feature_dir = j.value("text_features", m.text_feature_dir);
  m.clip_duration = j.value("clip_duration", m.clip_duration);
  m.video_dim = j.value("video_dim", m.video_dim);
  m.text_dim = j.value("text_dim", m.text_dim);
  m.l2_normalize = j.value("l2_normalize", m.l2_normalize);
  m.npz_key = j.value("npz_key", m.npz_key);
  return m;
}

// Copies `src` onto `dst`, rejecting keys `dst` does not have.
void merge_checked(json& dst, const json& src, const std::string& prefix) {
  require(src.is_object(), "config: " + (prefix.empty() ? std::string("root") : prefix) + " must be an object");
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (key == "data.manifests") {
      dst[it.key()] = it.value();
      continue;
    }
    require(dst.contains(it.key()), "config: unknown key " + key);
    json& slot = dst[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, it.value(), key);
    } else {
      require(slot.is_number() == it.value().is_number() && slot.is_string() == it.value().is_string() &&
                  slot.is_boolean() == it.value().is_boolean() && slot.is_array() == it.value().is_array(),
              "config: wrong value type for " + key);
      slot = it.value();
    }
  }
}

void collect_keys(const json& j, const std::string& prefix, std::vector<std::string>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it.value().is_object() && key != "data.manifests") {
      collect_keys(it.value(), key, out);
    } else {
      out.push_back(key);
    }
  }
}

}  // namespace

json to_json(const RunConfig& c) {
  json manifests = json::object();
  for (const auto& [split, m] : c.data.manifests) manifests[split] = manifest_json(m);
  const SyntheticConfig& s = c.data.synthetic;
  return json{
      {"seed", c.seed},
      {"model",
       {{"dim", c.model.dim},
        {"heads", c.model.heads},
        {"ffn_mult", c.model.ffn_mult},
        {"dropout", c.model.dropout},
        {"anchor", to_string(c.model.anchor)},
        {"gates", to_string(c.model.gates)}}},
      {"interaction", {{"layers", c.model.interaction_layers}, {"heads", c.model.interaction_heads}}},
      {"encoder", {{"layers", c.model.encoder_layers}}},
      {"decoder", {{"layers", c.model.decoder_layers}, {"queries", c.model.queries}}},
      {"saliency", {{"vector_weights", c.model.saliency_vector_weights}}},
      {"loss",
       {{"l1", c.loss.l1},
        {"iou", c.loss.iou},
        {"cls", c.loss.cls},
        {"clip", c.loss.clip},
        {"frame", c.loss.frame},
        {"margin", c.loss.margin},
        {"temperature", c.loss.temperature}}},
      {"optim",
       {{"lr", c.optim.lr},
        {"weight_decay", c.optim.weight_decay},
        {"lr_drop_epoch", c.optim.lr_drop_epoch},
        {"lr_drop_factor", c.optim.lr_drop_factor},
        {"grad_clip", c.optim.grad_clip},
        {"batch_size", c.optim.batch_size},
        {"epochs", c.optim.epochs},
        {"beta1", c.optim.beta1},
        {"beta2", c.optim.beta2},
        {"eps", c.optim.eps}}},
      {"data",
       {{"source", c.data.source},
        {"n_train", c.data.n_train},
        {"n_val", c.data.n_val},
        {"manifests", manifests},
        {"synthetic",
         {{"video_len", range_json(s.video_len)},
          {"text_len", range_json(s.text_len)},
          {"d_v", s.d_v},
          {"d_t", s.d_t},
          {"signal_strength", s.signal_strength},
          {"noise_std", s.noise_std},
          {"moments_per_video", range_json(s.moments_per_video)},
          {"distractor_rate", s.distractor_rate},
          {"coverage", s.coverage},
          {"clip_duration", s.clip_duration},
          {"seed", s.seed}}}}},
      {"train",
       {{"checkpoint_every", c.train.checkpoint_every},
        {"eval_every", c.train.eval_every},
        {"stop_r1_at_05", c.train.stop_r1_at_05},
        {"stop_hd_map", c.train.stop_hd_map},
        {"out_dir", c.train.out_dir}}},
      {"eval", {{"top_k", c.eval.top_k}, {"nms", c.eval.nms}, {"nms_iou", c.eval.nms_iou}}},
  };
}

RunConfig config_from_json(const json& j) {
  json m = to_json(RunConfig{});
  try {
    merge_checked(m, j, "");
    RunConfig c;
    c.seed = m["seed"].get<std::uint64_t>();
    c.model.dim = m["model"]["dim"].get<int>();
    c.model.heads = m["model"]["heads"].get<int>();
    c.model.ffn_mult = m["model"]["ffn_mult"].get<int>();
    c.model.dropout = m["model"]["dropout"].get<double>();
    c.model.anchor = parse_anchor_method(m["model"]["anchor"].get<std::string>());
    c.model.gates = parse_gates(m["model"]["gates"].get<std::string>());
    c.model.interaction_layers = m["interaction"]["layers"].get<int>();
    c.model.interaction_heads = m["interaction"]["heads"].get<int>();
    c.model.encoder_layers = m["encoder"]["layers"].get<int>();
    c.model.decoder_layers = m["decoder"]["layers"].get<int>();
    c.model.queries = m["decoder"]["queries"].get<int>();
    c.model.saliency_vector_weights = m["saliency"]["vector_weights"].get<bool>();
    const json& l = m["loss"];
    c.loss.l1 = l["l1"].get<double>();
    c.loss.iou = l["iou"].get<double>();
    c.loss.cls = l["cls"].get<double>();
    c.loss.clip = l["clip"].get<double>();
    c.loss.frame = l["frame"].get<double>();
    c.loss.margin = l["margin"].get<double>();
    c.loss.temperature = l["temperature"].get<double>();
    const json& o = m["optim"];
    c.optim.lr = o["lr"].get<double>();
    c.optim.weight_decay = o["weight_decay"].get<double>();
    c.optim.lr_drop_epoch = o["lr_drop_epoch"].get<int>();
    c.optim.lr_drop_factor = o["lr_drop_factor"].get<double>();
    c.optim.grad_clip = o["grad_clip"].get<double>();
    c.optim.batch_size = o["batch_size"].get<int>();
    c.optim.epochs = o["epochs"].get<int>();
    c.optim.beta1 = o["beta1"].get<double>();
    c.optim.beta2 = o["beta2"].get<double>();
    c.optim.eps = o["eps"].get<double>();
    const json& d = m["data"];
    c.data.source = d["source"].get<std::string>();
    c.data.n_train = d["n_train"].get<int>();
    c.data.n_val = d["n_val"].get<int>();
    for (auto it = d["manifests"].begin(); it != d["manifests"].end(); ++it) {
      c.data.manifests[it.key()] = manifest_from(it.value());
    }
    const json& s = d["synthetic"];
    c.data.synthetic.video_len = range_from(s["video_len"]);
    c.data.synthetic.text_len = range_from(s["text_len"]);
    c.data.synthetic.d_v = s["d_v"].get<int>();
    c.data.synthetic.d_t = s["d_t"].get<int>();
    c.data.synthetic.signal_strength = s["signal_strength"].get<double>();
    c.data.synthetic.noise_std = s["noise_std"].get<double>();
    c.data.synthetic.moments_per_video = range_from(s["moments_per_video"]);
    c.data.synthetic.distractor_rate = s["distractor_rate"].get<double>();
    c.data.synthetic.coverage = s["coverage"].get<double>();
    c.data.synthetic.clip_duration = s["clip_duration"].get<double>();
    c.data.synthetic.seed = s["seed"].get<std::uint64_t>();
    const json& t = m["train"];
    c.train.checkpoint_every = t["checkpoint_every"].get<int>();
    c.train.eval_every = t["eval_every"].get<int>();
    c.train.stop_r1_at_05 = t["stop_r1_at_05"].get<double>();
    c.train.stop_hd_map = t["stop_hd_map"].get<double>();
    c.train.out_dir = t["out_dir"].get<std::string>();
    c.eval.top_k = m["eval"]["top_k"].get<int>();
    c.eval.nms = m["eval"]["nms"].get<bool>();
    c.eval.nms_iou = m["eval"]["nms_iou"].get<double>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, std::string("config: ") + e.what());
  }
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open config " + path, ErrorCode::Io);
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, "config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path);
  require(out.good(), "cannot write config " + path, ErrorCode::Io);
  out << to_json(cfg).dump(2) << '\n';
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  collect_keys(to_json(RunConfig{}), "", keys);
  return keys;
}

bool is_config_key(const std::string& dotted) {
  const std::vector<std::string> keys = config_keys();
  return std::find(keys.begin(), keys.end(), dotted) != keys.end();
}

RunConfig apply_override(const RunConfig& cfg, const std::string& dotted, const json& value) {
  require(is_config_key(dotted), "unknown config key " + dotted);
  json j = to_json(cfg);
  json patch = json::object();
  json* p = &patch;
  size_t start = 0;
  while (true) {
    const size_t dot = dotted.find('.', start);
    const std::string part = dotted.substr(start, dot - start);
    if (dot == std::string::npos) {
      (*p)[part] = value;
      break;
    }
    p = &(*p)[part];
    start = dot + 1;
  }
  merge_checked(j, patch, "");
  return config_from_json(j);
}

}  // namespace vtg
