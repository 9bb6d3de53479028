// Command-line front end over the C interface.

#include "vtg/vtg.h"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

int report_failure(vtg_status s, const char* what) {
  std::cerr << "error: " << what << ": " << vtg_last_error() << " (status " << static_cast<int>(s) << ")\n";
  return static_cast<int>(s);
}

// Prints and frees a library-owned string; optionally mirrors it to a file.
void emit(char* text, const std::string& path = "") {
  if (!text) return;
  std::cout << text << '\n';
  if (!path.empty()) std::ofstream(path) << text << '\n';
  vtg_string_free(text);
}

void print_line(const char* json, void*) {
  std::cerr << json << '\n';
}

struct ConfigHandle {
  vtg_config* cfg = nullptr;
  ~ConfigHandle() { vtg_config_free(cfg); }
};

struct ModelHandle {
  vtg_model* model = nullptr;
  ~ModelHandle() { vtg_model_free(model); }
};

// "key=value" pairs from --set.
vtg_status apply_sets(vtg_config* cfg, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: --set expects key=value, got " << kv << '\n';
      return VTG_ERR_INVALID_ARGUMENT;
    }
    const vtg_status s = vtg_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (s != VTG_OK) return s;
  }
  return VTG_OK;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video temporal grounding: train, evaluate, predict, ablate, plot"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(vtg_version()));

  std::string config_path, ckpt, split = "val", mode, out, grid_path, in_path, report_path, anchor;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets, qids;
  int top_k = 3;

  CLI::App* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("--config", config_path, "Config file (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--set", sets, "Override a config key, key=value (repeatable)");
  train->add_option("--anchor", anchor, "Text anchor pooling")
      ->check(CLI::IsMember({"mean", "max", "weighted", "transformer"}));

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", split, "Split name")->capture_default_str();
  eval->add_option("--mode", mode, "standard or gate_saliency")->check(CLI::IsMember({"standard", "gate_saliency"}));
  eval->add_option("--report", report_path, "Also write the JSON report here");

  CLI::App* predict = app.add_subcommand("predict", "Write a prediction file for a split");
  predict->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  predict->add_option("--out", out, "Output JSON-lines file")->required();
  predict->add_option("--split", split, "Split name")->capture_default_str();

  CLI::App* score = app.add_subcommand("score", "Compute metrics from a prediction file");
  score->add_option("--in", in_path, "Prediction file")->required()->check(CLI::ExistingFile);
  score->add_option("--mode", mode, "standard or gate_saliency")->check(CLI::IsMember({"standard", "gate_saliency"}));

  CLI::App* ablate = app.add_subcommand("ablate", "Train and evaluate every point of a grid");
  ablate->add_option("--config", config_path, "Base config file")->required()->check(CLI::ExistingFile);
  ablate->add_option("--grid", grid_path, "Grid file (JSON)")->required()->check(CLI::ExistingFile);
  ablate->add_option("--set", sets, "Override a base config key, key=value (repeatable)");
  ablate->add_option("--anchor", anchor, "Text anchor pooling for the base config")
      ->check(CLI::IsMember({"mean", "max", "weighted", "transformer"}));

  CLI::App* plot = app.add_subcommand("plot", "Render SVG plots from a prediction file");
  plot->add_option("--in", in_path, "Prediction file")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", out, "Output directory")->required();
  plot->add_option("--qid", qids, "Only these qids (repeatable)");
  plot->add_option("--top-k", top_k, "Predicted windows to draw")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  if (*train || *ablate) {
    ConfigHandle c;
    vtg_status s = vtg_config_load(config_path.c_str(), &c.cfg);
    if (s != VTG_OK) return report_failure(s, "loading config");
    if ((s = apply_sets(c.cfg, sets)) != VTG_OK) return report_failure(s, "applying --set");
    if (seed && (s = vtg_config_set_seed(c.cfg, *seed)) != VTG_OK) return report_failure(s, "setting seed");
    if (!anchor.empty() && (s = vtg_config_set(c.cfg, "model.anchor", anchor.c_str())) != VTG_OK) {
      return report_failure(s, "setting anchor");
    }
    char* result = nullptr;
    if (*train) {
      s = vtg_train(c.cfg, print_line, nullptr, &result);
      if (s != VTG_OK) return report_failure(s, "training");
    } else {
      s = vtg_ablate(c.cfg, grid_path.c_str(), print_line, nullptr, &result);
      if (s != VTG_OK) return report_failure(s, "ablation");
    }
    emit(result);
    return 0;
  }

  if (*eval || *predict) {
    ModelHandle m;
    vtg_status s = vtg_model_load(ckpt.c_str(), &m.model);
    if (s != VTG_OK) return report_failure(s, "loading checkpoint");
    char* result = nullptr;
    if (*eval) {
      s = vtg_model_evaluate(m.model, split.c_str(), mode.empty() ? nullptr : mode.c_str(), &result);
      if (s != VTG_OK) return report_failure(s, "evaluation");
      emit(result, report_path);
    } else {
      s = vtg_model_predict(m.model, split.c_str(), out.c_str(), &result);
      if (s != VTG_OK) return report_failure(s, "prediction");
      emit(result);
    }
    return 0;
  }

  if (*score) {
    char* result = nullptr;
    const vtg_status s = vtg_evaluate_predictions(in_path.c_str(), mode.empty() ? nullptr : mode.c_str(), &result);
    if (s != VTG_OK) return report_failure(s, "scoring");
    emit(result);
    return 0;
  }

  if (*plot) {
    std::string csv;
    for (const std::string& q : qids) csv += (csv.empty() ? "" : ",") + q;
    int written = 0;
    const vtg_status s = vtg_plot(in_path.c_str(), out.c_str(), csv.empty() ? nullptr : csv.c_str(), top_k, &written);
    if (s != VTG_OK) return report_failure(s, "plotting");
    std::cout << written << " plot(s) written to " << out << '\n';
    return 0;
  }
  return 0;
}
