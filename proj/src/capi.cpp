#include "vtg/vtg.h"

#include "vtg/error.hpp"
#include "vtg/harness.hpp"

#include <cstring>
#include <sstream>
#include <string>

struct vtg_config {
  vtg::RunConfig cfg;
};

struct vtg_model {
  std::unique_ptr<vtg::GroundingModel> model;
  vtg::Checkpoint info;
};

namespace {

thread_local std::string g_last_error;

vtg_status to_status(vtg::ErrorCode code) {
  switch (code) {
    case vtg::ErrorCode::InvalidArgument: return VTG_ERR_INVALID_ARGUMENT;
    case vtg::ErrorCode::Shape: return VTG_ERR_SHAPE;
    case vtg::ErrorCode::Io: return VTG_ERR_IO;
    case vtg::ErrorCode::Parse: return VTG_ERR_PARSE;
    case vtg::ErrorCode::NonFinite: return VTG_ERR_NON_FINITE;
    case vtg::ErrorCode::Internal: return VTG_ERR_INTERNAL;
  }
  return VTG_ERR_INTERNAL;
}

template <typename F>
vtg_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return VTG_OK;
  } catch (const vtg::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = e.what();
    return VTG_ERR_PARSE;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return VTG_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return VTG_ERR_INTERNAL;
  }
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw vtg::Error(vtg::ErrorCode::Internal, "out of memory");
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void need(const void* p, const char* what) {
  vtg::require(p != nullptr, std::string(what) + " must not be null");
}

}  // namespace

extern "C" {

const char* vtg_version(void) { return "1.0.0"; }

const char* vtg_last_error(void) { return g_last_error.c_str(); }

void vtg_string_free(char* s) { std::free(s); }

vtg_status vtg_config_load(const char* path, vtg_config** out) {
  return guarded([&] {
    need(out, "out");
    auto c = std::make_unique<vtg_config>();
    if (path) c->cfg = vtg::load_config(path);
    *out = c.release();
  });
}

void vtg_config_free(vtg_config* cfg) { delete cfg; }

vtg_status vtg_config_set(vtg_config* cfg, const char* key, const char* json_value) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(json_value, "value");
    nlohmann::json v;
    try {
      v = nlohmann::json::parse(json_value);
    } catch (const nlohmann::json::exception&) {
      v = std::string(json_value);  // bare strings are accepted unquoted
    }
    cfg->cfg = vtg::apply_override(cfg->cfg, key, v);
  });
}

vtg_status vtg_config_set_seed(vtg_config* cfg, uint64_t seed) {
  return guarded([&] {
    need(cfg, "config");
    cfg->cfg.seed = seed;
  });
}

vtg_status vtg_config_to_json(const vtg_config* cfg, char** out) {
  return guarded([&] {
    need(cfg, "config");
    need(out, "out");
    *out = dup(vtg::to_json(cfg->cfg).dump(2));
  });
}

vtg_status vtg_train(const vtg_config* cfg, vtg_progress_fn progress, void* user, char** summary_json) {
  return guarded([&] {
    need(cfg, "config");
    vtg::TrainHooks hooks;
    if (progress) {
      hooks.on_epoch = [&](const vtg::EpochLog& log) { progress(log.to_json().dump().c_str(), user); };
    }
    vtg::TrainResult r = vtg::train(cfg->cfg, hooks);
    if (summary_json) {
      nlohmann::json s{{"epochs", r.log.size()},
                       {"best_epoch", r.best_epoch},
                       {"best_map_avg", r.best_map_avg},
                       {"best_val", r.best_val},
                       {"best_checkpoint", r.best_checkpoint},
                       {"last_checkpoint", r.last_checkpoint},
                       {"final_loss", r.log.back().to_json()["loss"]}};
      *summary_json = dup(s.dump(2));
    }
  });
}

vtg_status vtg_model_load(const char* checkpoint_path, vtg_model** out) {
  return guarded([&] {
    need(checkpoint_path, "checkpoint path");
    need(out, "out");
    auto m = std::make_unique<vtg_model>();
    m->model = vtg::load_checkpoint(checkpoint_path, &m->info);
    *out = m.release();
  });
}

void vtg_model_free(vtg_model* model) { delete model; }

vtg_status vtg_model_config(const vtg_model* model, char** config_json) {
  return guarded([&] {
    need(model, "model");
    need(config_json, "out");
    *config_json = dup(vtg::to_json(model->info.config).dump(2));
  });
}

vtg_status vtg_model_evaluate(const vtg_model* model, const char* split, const char* mode, char** report_json) {
  return guarded([&] {
    need(model, "model");
    need(split, "split");
    need(report_json, "out");
    nlohmann::json r =
        vtg::evaluate(*model->model, model->info.config, split, vtg::parse_eval_mode(mode ? mode : ""));
    r["checkpoint_epoch"] = model->info.epoch;
    *report_json = dup(r.dump(2));
  });
}

vtg_status vtg_model_predict(const vtg_model* model, const char* split, const char* out_path, char** summary_json) {
  return guarded([&] {
    need(model, "model");
    need(split, "split");
    need(out_path, "output path");
    const vtg::RunConfig& cfg = model->info.config;
    std::vector<vtg::GroundingSample> samples;
    std::vector<std::string> errors;
    if (cfg.data.source == "files") {
      auto it = cfg.data.manifests.find(split);
      vtg::require(it != cfg.data.manifests.end(), std::string("no manifest for split ") + split);
      vtg::LoadReport rep = vtg::load_dataset(it->second);
      samples = std::move(rep.samples);
      errors = std::move(rep.errors);
    } else {
      samples = vtg::load_split(cfg, split);
    }
    std::vector<vtg::PredictionRecord> records =
        vtg::predict_records(*model->model, samples, cfg.eval, vtg::EvalMode::Standard);
    vtg::write_predictions(out_path, records);
    if (summary_json) {
      nlohmann::json s{{"written", records.size()}, {"errors", errors}, {"path", out_path}};
      *summary_json = dup(s.dump(2));
    }
  });
}

vtg_status vtg_evaluate_predictions(const char* path, const char* mode, char** report_json) {
  return guarded([&] {
    need(path, "path");
    need(report_json, "out");
    const vtg::EvalMode m = vtg::parse_eval_mode(mode ? mode : "");
    *report_json = dup(vtg::evaluate_records(vtg::read_predictions(path), m).dump(2));
  });
}

vtg_status vtg_ablate(const vtg_config* cfg, const char* grid_path, vtg_progress_fn progress, void* user,
                      char** table_json) {
  return guarded([&] {
    need(cfg, "config");
    need(grid_path, "grid path");
    vtg::AblationGrid grid = vtg::load_grid(grid_path, cfg->cfg);
    auto report = [&](const std::string& msg) {
      if (progress) progress(nlohmann::json{{"run", msg}}.dump().c_str(), user);
    };
    nlohmann::json table = vtg::ablate(cfg->cfg, grid, report);
    if (table_json) *table_json = dup(table.dump(2));
  });
}

vtg_status vtg_plot(const char* prediction_path, const char* out_dir, const char* qids_csv, int top_k,
                    int* files_written) {
  return guarded([&] {
    need(prediction_path, "prediction path");
    need(out_dir, "output directory");
    std::vector<std::string> qids;
    if (qids_csv) {
      std::stringstream ss(qids_csv);
      std::string q;
      while (std::getline(ss, q, ',')) {
        if (!q.empty()) qids.push_back(q);
      }
    }
    const auto files = vtg::plot_predictions(prediction_path, out_dir, qids, top_k);
    if (files_written) *files_written = static_cast<int>(files.size());
  });
}

}  // extern "C"
