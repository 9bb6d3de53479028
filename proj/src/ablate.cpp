#include "vtg/error.hpp"
#include "vtg/harness.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace vtg {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

RunConfig apply_point(const RunConfig& base, const json& overrides) {
  RunConfig cfg = base;
  for (auto it = overrides.begin(); it != overrides.end(); ++it) cfg = apply_override(cfg, it.key(), it.value());
  return cfg;
}

std::string point_label(const json& overrides) {
  if (overrides.empty()) return "base";
  std::string s;
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    if (!s.empty()) s += ", ";
    s += it.key() + "=" + (it.value().is_string() ? it.value().get<std::string>() : it.value().dump());
  }
  return s;
}

}  // namespace

AblationGrid parse_grid(const json& j, const RunConfig& base) {
  require(j.is_object(), "grid file must hold an object", ErrorCode::Parse);
  for (auto it = j.begin(); it != j.end(); ++it) {
    require(it.key() == "grid" || it.key() == "points" || it.key() == "seeds", "unknown grid field " + it.key(),
            ErrorCode::Parse);
  }
  AblationGrid g;
  if (j.contains("grid")) {
    const json& axes = j["grid"];
    require(axes.is_object(), "grid must map keys to value lists", ErrorCode::Parse);
    std::vector<json> points{json::object()};
    for (auto it = axes.begin(); it != axes.end(); ++it) {
      require(is_config_key(it.key()), "unknown config key in grid: " + it.key());
      require(it.value().is_array() && !it.value().empty(), "grid values for " + it.key() + " must be a list",
              ErrorCode::Parse);
      std::vector<json> next;
      for (const json& p : points) {
        for (const json& v : it.value()) {
          json q = p;
          q[it.key()] = v;
          next.push_back(std::move(q));
        }
      }
      points = std::move(next);
    }
    for (json& p : points) g.points.push_back(AblationPoint{std::move(p)});
  }
  if (j.contains("points")) {
    for (const json& p : j["points"]) {
      require(p.is_object(), "each point must be an object", ErrorCode::Parse);
      for (auto it = p.begin(); it != p.end(); ++it) {
        require(is_config_key(it.key()), "unknown config key in points: " + it.key());
      }
      g.points.push_back(AblationPoint{p});
    }
  }
  if (g.points.empty()) g.points.push_back(AblationPoint{json::object()});
  if (j.contains("seeds")) {
    g.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  } else {
    g.seeds = {base.seed};
  }
  require(!g.seeds.empty(), "grid needs at least one seed");
  // Every point must produce a valid configuration before anything trains.
  for (const AblationPoint& p : g.points) apply_point(base, p.overrides).validate();
  return g;
}

AblationGrid load_grid(const std::string& path, const RunConfig& base) {
  std::ifstream in(path);
  require(in.good(), "cannot open grid " + path, ErrorCode::Io);
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, "grid " + path + ": " + e.what());
  }
  return parse_grid(j, base);
}

json ablate(const RunConfig& base, const AblationGrid& grid, const std::function<void(const std::string&)>& progress) {
  json rows = json::array();
  const fs::path root = base.train.out_dir;
  for (size_t pi = 0; pi < grid.points.size(); ++pi) {
    const json& overrides = grid.points[pi].overrides;
    json runs = json::array();
    double sums[4] = {0, 0, 0, 0};
    size_t hd_count = 0;
    for (std::uint64_t seed : grid.seeds) {
      RunConfig cfg = apply_point(base, overrides);
      cfg.seed = seed;
      cfg.train.out_dir = (root / ("point" + std::to_string(pi) + "_seed" + std::to_string(seed))).string();
      if (progress) progress("point " + std::to_string(pi) + " (" + point_label(overrides) + ") seed " +
                             std::to_string(seed));
      TrainResult r = train(cfg);
      const json& v = r.best_val;
      const json mr = v.value("mr", json::object());
      json run{{"seed", seed},
               {"best_epoch", r.best_epoch},
               {"R1@0.5", mr.value("R1@0.5", 0.0)},
               {"R1@0.7", mr.value("R1@0.7", 0.0)},
               {"mAP_avg", mr.value("mAP_avg", 0.0)}};
      sums[0] += run["R1@0.5"].get<double>();
      sums[1] += run["R1@0.7"].get<double>();
      sums[2] += run["mAP_avg"].get<double>();
      if (v.contains("hd")) {
        run["HD_mAP"] = v["hd"]["mAP"];
        sums[3] += v["hd"]["mAP"].get<double>();
        ++hd_count;
      }
      runs.push_back(run);
    }
    const double n = static_cast<double>(grid.seeds.size());
    json row{{"point", overrides},
             {"label", point_label(overrides)},
             {"R1@0.5", sums[0] / n},
             {"R1@0.7", sums[1] / n},
             {"mAP_avg", sums[2] / n},
             {"runs", runs}};
    if (hd_count > 0) row["HD_mAP"] = sums[3] / static_cast<double>(hd_count);
    rows.push_back(row);
  }
  json table{{"columns", {"R1@0.5", "R1@0.7", "mAP_avg", "HD_mAP"}}, {"seeds", grid.seeds}, {"rows", rows}};
  fs::create_directories(root);
  std::ofstream(root / "ablation.json") << table.dump(2) << '\n';
  std::ofstream(root / "ablation.md") << ablation_markdown(table);
  return table;
}

std::string ablation_markdown(const json& table) {
  std::ostringstream s;
  s << "| config | R1@0.5 | R1@0.7 | mAP avg | HD mAP |\n|---|---|---|---|---|\n";
  s << std::fixed << std::setprecision(2);
  for (const json& row : table.at("rows")) {
    s << "| " << row.at("label").get<std::string>() << " | " << 100.0 * row.at("R1@0.5").get<double>() << " | "
      << 100.0 * row.at("R1@0.7").get<double>() << " | " << 100.0 * row.at("mAP_avg").get<double>() << " | ";
    if (row.contains("HD_mAP")) {
      s << 100.0 * row["HD_mAP"].get<double>();
    } else {
      s << "-";
    }
    s << " |\n";
  }
  return s.str();
}

}  // namespace vtg
