#include "tempdir.hpp"
#include "tiny_config.hpp"
#include "vtg/error.hpp"
#include "vtg/harness.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace vtg;
using namespace vtg::testing;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

PredictionRecord oracle_record(const GroundingSample& s) {
  PredictionRecord r;
  r.qid = s.qid;
  r.vid = s.vid;
  r.query = s.query;
  r.duration = s.duration;
  for (const Span& g : s.gt_windows) r.windows.push_back(ScoredSpan{g, 1.0});
  r.gt_windows = s.gt_windows;
  r.saliency_labels = s.saliency_labels;
  r.saliency = *s.saliency_labels;
  return r;
}

}  // namespace

TEST_CASE("config round trip and validation") {
  RunConfig c = tiny_config("out");
  c.model.anchor = AnchorMethod::Weighted;
  c.model.gates = parse_gates("local");
  c.loss.clip = 0.5;
  c.data.manifests["val"].annotation_path = "val.jsonl";
  const nlohmann::json j = to_json(c);
  CHECK(to_json(config_from_json(j)) == j);

  TempDir dir;
  save_config(dir.file("c.json"), c);
  CHECK(to_json(load_config(dir.file("c.json"))) == j);
  {
    std::ofstream f(dir.file("comments.json"));
    f << "{\n  // comment\n  \"seed\": 9, \"model\": {\"dim\": 16, \"heads\": 4}\n}\n";
  }
  const RunConfig partial = load_config(dir.file("comments.json"));
  CHECK(partial.seed == 9);
  CHECK(partial.model.dim == 16);
  CHECK(partial.model.heads == 4);
  CHECK(partial.model.queries == 10);
  CHECK(partial.optim.epochs == 200);

  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"model", {{"dimm", 3}}}}), Error);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"model", {{"dim", 10}, {"heads", 3}}}}), Error);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"model", {{"dim", 12}, {"heads", 4}}}}), Error);
  CHECK(config_from_json(nlohmann::json{{"model", {{"dim", 12}, {"heads", 4}}}, {"interaction", {{"heads", 3}}}})
            .model.interaction_heads == 3);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"model", {{"anchor", "median"}}}}), Error);

  CHECK(is_config_key("model.gates"));
  CHECK(is_config_key("loss.clip"));
  CHECK(is_config_key("interaction.heads"));
  CHECK_FALSE(is_config_key("loss.nothing"));
  const RunConfig o = apply_override(c, "model.gates", "none");
  CHECK_FALSE(o.model.gates.local);
  CHECK(apply_override(c, "data.synthetic.video_len", nlohmann::json::array({5, 6})).data.synthetic.video_len.max == 6);
  CHECK_THROWS_AS(apply_override(c, "model.bogus", 1), Error);
}

TEST_CASE("learning rate schedule") {
  OptimConfig o;
  o.lr = 1e-3;
  o.lr_drop_epoch = 3;
  o.lr_drop_factor = 0.1;
  CHECK(learning_rate(o, 1) == 1e-3);
  CHECK(learning_rate(o, 3) == 1e-3);
  CHECK(learning_rate(o, 4) == doctest::Approx(1e-4));
  o.lr_drop_epoch = 0;
  CHECK(learning_rate(o, 50) == 1e-3);
}

TEST_CASE("gradient clipping") {
  ad::Parameter a{"a", Matrix::Zero(1, 2), Matrix(1, 2), true};
  ad::Parameter b{"b", Matrix::Zero(1, 1), Matrix(1, 1), true};
  a.grad << 3, 0;
  b.grad << 4;
  CHECK(clip_grad_norm({&a, &b}, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad(0, 0) == doctest::Approx(0.6));
  CHECK(b.grad(0, 0) == doctest::Approx(0.8));
  CHECK(clip_grad_norm({&a, &b}, 10.0) == doctest::Approx(1.0));
  CHECK(b.grad(0, 0) == doctest::Approx(0.8));
}

TEST_CASE("AdamW decays only flagged parameters") {
  OptimConfig o;
  o.weight_decay = 0.5;
  ad::Parameter w{"w", Matrix::Constant(1, 1, 2.0), Matrix::Zero(1, 1), true};
  ad::Parameter b{"b", Matrix::Constant(1, 1, 2.0), Matrix::Zero(1, 1), false};
  AdamW opt({&w, &b}, o);
  opt.step(0.1);
  CHECK(w.value(0, 0) == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
  CHECK(b.value(0, 0) == 2.0);
  CHECK(opt.steps() == 1);

  // with bias correction the first step moves by lr in the gradient's sign
  ad::Parameter c{"c", Matrix::Constant(1, 1, 2.0), Matrix::Constant(1, 1, 3.0), false};
  AdamW fresh({&c}, o);
  fresh.step(0.1);
  CHECK(c.value(0, 0) == doctest::Approx(1.9).epsilon(1e-6));
}

TEST_CASE("training smoke run writes loadable checkpoints") {
  TempDir dir;
  RunConfig c = tiny_config(dir.path().string(), 2);
  c.train.checkpoint_every = 1;
  const TrainResult r = train(c);
  REQUIRE(r.log.size() == 2);
  CHECK(fs::exists(dir.file("train_log.jsonl")));
  CHECK(fs::exists(dir.file("best.ckpt")));
  CHECK(fs::exists(dir.file("last.ckpt")));
  CHECK(fs::exists(dir.file("epoch_1.ckpt")));
  CHECK(fs::exists(dir.file("epoch_2.ckpt")));
  CHECK(r.best_epoch >= 1);
  for (const EpochLog& e : r.log) {
    CHECK(std::isfinite(e.total));
    CHECK(e.val.contains("mr"));
  }
  Checkpoint info;
  auto model = load_checkpoint(r.last_checkpoint, &info);
  CHECK(info.epoch == 2);
  CHECK(to_json(info.config) == to_json(c));
  const nlohmann::json a = evaluate(*model, c, "val", EvalMode::Standard);
  CHECK(a["mr"] == r.log.back().val["mr"]);

  // a re-saved checkpoint is byte-identical
  save_checkpoint(dir.file("again.ckpt"), *model, info.config, info.epoch, info.metrics);
  CHECK(slurp(dir.file("again.ckpt")) == slurp(r.last_checkpoint));
  CHECK_THROWS_AS(load_checkpoint(dir.file("train_log.jsonl")), Error);
}

TEST_CASE("training is deterministic and logs the lr drop") {
  TempDir d1, d2;
  RunConfig c = tiny_config(d1.path().string(), 3);
  c.optim.lr_drop_epoch = 2;
  TrainHooks quiet;
  quiet.write_files = false;
  const TrainResult a = train(c, quiet);
  c.train.out_dir = d2.path().string();
  const TrainResult b = train(c, quiet);
  CHECK(a.log[0].total == b.log[0].total);
  CHECK(a.log[2].total == b.log[2].total);
  CHECK(a.log[0].lr == c.optim.lr);
  CHECK(a.log[1].lr == c.optim.lr);
  CHECK(a.log[2].lr == doctest::Approx(c.optim.lr * 0.1));
  c.seed = 4;
  CHECK(train(c, quiet).log[0].total != a.log[0].total);
}

TEST_CASE("evaluation reports") {
  const std::vector<GroundingSample> val = load_split(tiny_config("x"), "val");
  REQUIRE(val.size() == 4);
  std::vector<PredictionRecord> oracle;
  for (const GroundingSample& s : val) oracle.push_back(oracle_record(s));
  const nlohmann::json rep = evaluate_records(oracle, EvalMode::Standard);
  CHECK(rep["mr"]["R1@0.5"] == 1.0);
  CHECK(rep["mr"]["R1@0.7"] == 1.0);
  CHECK(rep["hd"]["mAP"] == 1.0);

  const nlohmann::json gate = evaluate_records(oracle, EvalMode::GateSaliency);
  CHECK_FALSE(gate.contains("mr"));
  CHECK(gate.contains("hd"));

  for (auto& r : oracle) r.saliency_labels.reset();
  CHECK_FALSE(evaluate_records(oracle, EvalMode::Standard).contains("hd"));
  CHECK_THROWS_AS(parse_eval_mode("fast"), Error);
  CHECK(parse_eval_mode("") == EvalMode::Standard);
}

TEST_CASE("predictions: structure, file round trip, metric self-consistency") {
  TempDir dir;
  const RunConfig c = tiny_config(dir.path().string(), 1);
  GroundingModel model(c.model, c.data.synthetic.d_v, c.data.synthetic.d_t, c.seed);
  const std::vector<GroundingSample> val = load_split(c, "val");
  const auto records = predict_records(model, val, c.eval, EvalMode::Standard);
  REQUIRE(records.size() == val.size());
  for (size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].windows.size() == static_cast<size_t>(c.model.queries));
    CHECK(records[i].saliency.size() == static_cast<size_t>(val[i].video.length()));
    for (const ScoredSpan& w : records[i].windows) {
      CHECK(w.span.start >= 0.0);
      CHECK(w.span.end <= records[i].duration);
      CHECK(w.span.start <= w.span.end);
    }
    for (size_t k = 1; k < records[i].windows.size(); ++k) CHECK(records[i].windows[k - 1].score >= records[i].windows[k].score);
  }
  write_predictions(dir.file("p.jsonl"), records);
  const auto back = read_predictions(dir.file("p.jsonl"));
  CHECK(evaluate_records(back, EvalMode::Standard) == evaluate_records(records, EvalMode::Standard));
  nlohmann::json direct = evaluate(model, c, "val", EvalMode::Standard);
  CHECK(direct["split"] == "val");
  direct.erase("split");
  CHECK(evaluate_records(records, EvalMode::Standard) == direct);

  const nlohmann::json rep = evaluate_records(records, EvalMode::Standard);
  const MRResult mr = evaluate_moments(moment_queries(records));
  CHECK(rep["mr"]["R1@0.5"].get<double>() == mr.r1_at.at(0.5));
  CHECK(rep["mr"]["mAP_avg"].get<double>() == mr.map_avg);
  CHECK(rep["hd"]["mAP"].get<double>() == hd_map(highlight_queries(records)));
  CHECK(rep["hd"]["HIT@1"].get<double>() == hit_at_1(highlight_queries(records)));

  const auto gate = predict_records(model, val, c.eval, EvalMode::GateSaliency);
  for (const auto& r : gate) {
    for (double s : r.saliency) {
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
    }
  }
}

TEST_CASE("ablation grids") {
  const RunConfig base = tiny_config("x");
  const auto gates = parse_grid(nlohmann::json::parse(R"({"grid": {"model.gates": ["none", "local", "nonlocal", "both"]}})"), base);
  CHECK(gates.points.size() == 4);
  CHECK(gates.seeds == std::vector<std::uint64_t>{base.seed});
  const auto lambdas =
      parse_grid(nlohmann::json::parse(R"({"grid": {"loss.clip": [0, 0.5, 1], "loss.frame": [0, 0.5, 1]}, "seeds": [1, 2]})"), base);
  CHECK(lambdas.points.size() == 9);
  CHECK(lambdas.seeds.size() == 2);
  const auto both = parse_grid(
      nlohmann::json::parse(R"({"grid": {"model.gates": ["none", "both"]}, "points": [{"model.anchor": "max"}]})"), base);
  CHECK(both.points.size() == 3);
  CHECK_THROWS_AS(parse_grid(nlohmann::json::parse(R"({"grid": {"model.gatez": ["none"]}})"), base), Error);
  CHECK_THROWS_AS(parse_grid(nlohmann::json::parse(R"({"grid": {"model.gates": ["sometimes"]}})"), base), Error);

  TempDir dir;
  RunConfig b = tiny_config(dir.path().string(), 1);
  const nlohmann::json table = ablate(b, parse_grid(nlohmann::json::parse(R"({"grid": {"model.gates": ["none", "both"]}})"), b));
  REQUIRE(table["rows"].size() == 2);
  for (const auto& row : table["rows"]) {
    for (const char* col : {"R1@0.5", "R1@0.7", "mAP_avg", "HD_mAP"}) CHECK(row.contains(col));
  }
  CHECK(fs::exists(dir.file("ablation.json")));
  CHECK(fs::exists(dir.file("ablation.md")));
  const std::string md = ablation_markdown(table);
  CHECK(md.find("R1@0.5") != std::string::npos);
  CHECK(md.find("HD mAP") != std::string::npos);
}

TEST_CASE("plots") {
  TempDir dir;
  PredictionRecord r;
  r.qid = "a<1>";
  r.query = "q";
  r.duration = 60.0;
  r.gt_windows = {Span{10, 20}};
  r.saliency = {0.1, 0.5, 0.2};
  const std::string svg = render_svg(r, 3);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("a&lt;1&gt;") != std::string::npos);
  CHECK(svg.find(">0</text>") != std::string::npos);
  CHECK(svg.find(">60</text>") != std::string::npos);
  CHECK(svg.find("P1") == std::string::npos);

  PredictionRecord r2 = r;
  r2.qid = "b";
  r2.windows = {ScoredSpan{{0, 30}, 0.9}, ScoredSpan{{30, 60}, 0.4}};
  CHECK(render_svg(r2, 3).find("P2") != std::string::npos);
  CHECK(render_svg(r2, 1).find("P2") == std::string::npos);
  write_predictions(dir.file("p.jsonl"), {r, r2});
  {
    std::ofstream f(dir.file("p.jsonl"), std::ios::app);
    f << "{broken\n";
  }
  CHECK(plot_predictions(dir.file("p.jsonl"), dir.file("all")).size() == 2);
  const auto one = plot_predictions(dir.file("p.jsonl"), dir.file("one"), {"b"});
  REQUIRE(one.size() == 1);
  CHECK(fs::path(one[0]).filename() == "b.svg");
}

TEST_CASE("shipped configs and grids parse") {
  namespace fs = std::filesystem;
  size_t configs = 0, grids = 0;
  for (const auto& entry : fs::directory_iterator(VTG_CONFIG_DIR)) {
    const std::string path = entry.path().string();
    INFO(path);
    if (entry.path().filename().string().rfind("grid_", 0) == 0) {
      CHECK_FALSE(load_grid(path, RunConfig{}).points.empty());
      ++grids;
    } else {
      CHECK_NOTHROW(load_config(path).validate());
      ++configs;
    }
  }
  CHECK(configs == 3);
  CHECK(grids == 3);
}
