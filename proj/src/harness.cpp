#include "vtg/harness.hpp"

#include "vtg/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace vtg {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// splits

std::vector<GroundingSample> load_split(const RunConfig& cfg, const std::string& split) {
  if (cfg.data.source == "synthetic") {
    require(split == "train" || split == "val", "synthetic data has only train and val splits, not " + split);
    SyntheticConfig s = cfg.data.synthetic;
    s.n_samples = cfg.data.n_train + cfg.data.n_val;
    SyntheticDataset ds = generate_synthetic(s);
    auto first = ds.samples.begin();
    auto mid = first + cfg.data.n_train;
    if (split == "train") return {std::make_move_iterator(first), std::make_move_iterator(mid)};
    return {std::make_move_iterator(mid), std::make_move_iterator(ds.samples.end())};
  }
  auto it = cfg.data.manifests.find(split);
  require(it != cfg.data.manifests.end(), "no manifest for split " + split);
  LoadReport report = load_dataset(it->second);
  require(!report.samples.empty(), "split " + split + " has no loadable records", ErrorCode::Io);
  return std::move(report.samples);
}

// ---------------------------------------------------------------------------
// optimisation

AdamW::AdamW(std::vector<ad::Parameter*> params, const OptimConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const ad::Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    ad::Parameter& p = *params_[i];
    if (p.grad.size() == 0) continue;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
    if (p.decay && cfg_.weight_decay > 0.0) p.value *= 1.0 - lr * cfg_.weight_decay;
    p.value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

double clip_grad_norm(const std::vector<ad::Parameter*>& params, double max_norm) {
  const double norm = ad::grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (ad::Parameter* p : params) {
      if (p->grad.size() > 0) p->grad *= s;
    }
  }
  return norm;
}

double learning_rate(const OptimConfig& cfg, int epoch) {
  return (cfg.lr_drop_epoch > 0 && epoch > cfg.lr_drop_epoch) ? cfg.lr * cfg.lr_drop_factor : cfg.lr;
}

// ---------------------------------------------------------------------------
// inference

EvalMode parse_eval_mode(const std::string& name) {
  if (name.empty() || name == "standard") return EvalMode::Standard;
  if (name == "gate_saliency") return EvalMode::GateSaliency;
  fail(ErrorCode::InvalidArgument, "unknown evaluation mode " + name);
}

std::vector<PredictionRecord> predict_records(const GroundingModel& model, const std::vector<GroundingSample>& samples,
                                              const EvalConfig& eval, EvalMode mode) {
  std::vector<PredictionRecord> out;
  out.reserve(samples.size());
  for (const GroundingSample& s : samples) {
    ad::Tape tape;
    nn::Context ctx{tape, false, nullptr, 0.0};
    SampleForward f = model.forward(ctx, s.video, s.text);
    PredictionRecord r;
    r.qid = s.qid;
    r.vid = s.vid;
    r.query = s.query;
    r.duration = s.duration;
    r.gt_windows = s.gt_windows;
    r.saliency_labels = s.saliency_labels;
    const Matrix& scores = (mode == EvalMode::GateSaliency ? f.non_local : f.saliency).value();
    r.saliency.assign(scores.data(), scores.data() + scores.size());
    for (const RankedSpan& rs : rank_predictions(to_prediction_set(f.decoder), eval.top_k, eval.nms, eval.nms_iou)) {
      const Span n = center_width_to_span(rs.moment);
      r.windows.push_back(ScoredSpan{Span{n.start * s.duration, n.end * s.duration}, rs.score});
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<MomentQuery> moment_queries(const std::vector<PredictionRecord>& records) {
  std::vector<MomentQuery> out;
  for (const PredictionRecord& r : records) out.push_back(MomentQuery{r.windows, r.gt_windows});
  return out;
}

std::vector<HighlightQuery> highlight_queries(const std::vector<PredictionRecord>& records) {
  std::vector<HighlightQuery> out;
  for (const PredictionRecord& r : records) {
    if (!r.saliency_labels) continue;
    require(r.saliency_labels->size() == r.saliency.size(), "record " + r.qid + ": saliency length mismatch",
            ErrorCode::Shape);
    out.push_back(HighlightQuery{r.saliency, *r.saliency_labels});
  }
  return out;
}

json evaluate_records(const std::vector<PredictionRecord>& records, EvalMode mode) {
  json report;
  report["mode"] = mode == EvalMode::GateSaliency ? "gate_saliency" : "standard";
  report["n"] = records.size();
  if (mode == EvalMode::Standard) {
    std::vector<MomentQuery> mq;
    for (MomentQuery& q : moment_queries(records)) {
      if (!q.ground_truth.empty()) mq.push_back(std::move(q));
    }
    if (!mq.empty()) {
      MRResult mr = evaluate_moments(mq);
      report["mr"] = json{{"R1@0.5", mr.r1_at[0.5]},      {"R1@0.7", mr.r1_at[0.7]},
                          {"mAP@0.5", mr.map_at.begin()->second}, {"mAP@0.75", mr.map_at.lower_bound(0.749)->second},
                          {"mAP_avg", mr.map_avg},        {"mIoU@1", mean_iou_at_1(mq)}};
    }
  }
  std::vector<HighlightQuery> hq = highlight_queries(records);
  if (!hq.empty()) {
    HDResult hd = evaluate_highlights(hq);
    report["hd"] = json{{"mAP", hd.map}, {"HIT@1", hd.hit_at_1}, {"n", hd.evaluated}};
  }
  return report;
}

json record_to_json(const PredictionRecord& r) {
  json windows = json::array();
  for (const ScoredSpan& s : r.windows) windows.push_back({s.span.start, s.span.end, s.score});
  json gt = json::array();
  for (const Span& s : r.gt_windows) gt.push_back({s.start, s.end});
  json j{{"qid", r.qid},
         {"vid", r.vid},
         {"query", r.query},
         {"duration", r.duration},
         {"pred_relevant_windows", windows},
         {"pred_saliency_scores", r.saliency},
         {"relevant_windows", gt}};
  if (r.saliency_labels) j["saliency_labels"] = *r.saliency_labels;
  return j;
}

PredictionRecord record_from_json(const json& j) {
  PredictionRecord r;
  r.qid = j.at("qid").is_string() ? j.at("qid").get<std::string>() : j.at("qid").dump();
  r.vid = j.value("vid", "");
  r.query = j.value("query", "");
  r.duration = j.at("duration").get<double>();
  for (const json& w : j.at("pred_relevant_windows")) {
    require(w.is_array() && w.size() == 3, "prediction window must be [start, end, score]", ErrorCode::Parse);
    r.windows.push_back(ScoredSpan{Span{w[0].get<double>(), w[1].get<double>()}, w[2].get<double>()});
  }
  r.saliency = j.value("pred_saliency_scores", std::vector<double>{});
  for (const json& w : j.value("relevant_windows", json::array())) {
    r.gt_windows.push_back(Span{w.at(0).get<double>(), w.at(1).get<double>()});
  }
  if (j.contains("saliency_labels")) r.saliency_labels = j["saliency_labels"].get<std::vector<double>>();
  return r;
}

void write_predictions(const std::string& path, const std::vector<PredictionRecord>& records) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  require(out.good(), "cannot write predictions to " + path, ErrorCode::Io);
  for (const PredictionRecord& r : records) out << record_to_json(r).dump() << '\n';
}

std::vector<PredictionRecord> read_predictions(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open predictions " + path, ErrorCode::Io);
  std::vector<PredictionRecord> out;
  std::string line;
  size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      fail(ErrorCode::Parse, path + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

json evaluate(const GroundingModel& model, const RunConfig& cfg, const std::string& split, EvalMode mode) {
  json report = evaluate_records(predict_records(model, load_split(cfg, split), cfg.eval, mode), mode);
  report["split"] = split;
  return report;
}

// ---------------------------------------------------------------------------
// training

json EpochLog::to_json() const {
  json j{{"epoch", epoch},
         {"lr", lr},
         {"loss",
          {{"total", total},
           {"margin", loss.margin},
           {"rank", loss.rank},
           {"mr", loss.mr},
           {"clip", loss.clip},
           {"frame", loss.frame}}},
         {"grad_norm", grad_norm},
         {"seconds", seconds}};
  if (!val.is_null()) j["val"] = val;
  return j;
}

namespace {

void check_finite(const BatchLoss& l) {
  const std::pair<const char*, const Var*> parts[] = {{"margin", &l.margin}, {"rank", &l.rank}, {"mr", &l.mr},
                                                      {"clip", &l.clip},     {"frame", &l.frame}, {"total", &l.total}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v->scalar())) fail(ErrorCode::NonFinite, std::string("non-finite loss component: ") + name);
  }
}

void check_finite_grads(const std::vector<ad::Parameter*>& params) {
  for (const ad::Parameter* p : params) {
    if (p->grad.size() > 0 && !p->grad.allFinite()) {
      fail(ErrorCode::NonFinite, "non-finite gradient for parameter " + p->name);
    }
  }
}

}  // namespace

TrainResult train(const RunConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  std::vector<GroundingSample> train_set = load_split(cfg, "train");
  std::vector<GroundingSample> val_set = load_split(cfg, "val");
  require(!train_set.empty(), "empty training split");
  GroundingModel model(cfg.model, train_set.front().video.dim(), train_set.front().text.dim(), cfg.seed);
  std::vector<ad::Parameter*> params = model.params().all();
  AdamW opt(params, cfg.optim);

  std::mt19937_64 shuffle_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 1);
  std::mt19937_64 dropout_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 2);
  std::mt19937_64 margin_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 3);

  const fs::path out_dir = cfg.train.out_dir;
  std::ofstream log_file;
  if (hooks.write_files) {
    fs::create_directories(out_dir);
    save_config((out_dir / "config.json").string(), cfg);
    log_file.open(out_dir / "train_log.jsonl");
    require(log_file.good(), "cannot write training log in " + out_dir.string(), ErrorCode::Io);
  }

  TrainResult result;
  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  const size_t bs = static_cast<size_t>(cfg.optim.batch_size);
  for (int epoch = 1; epoch <= cfg.optim.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    log.lr = learning_rate(cfg.optim, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double weight = 0.0, norm_sum = 0.0;
    size_t steps = 0;
    for (size_t start = 0; start < order.size(); start += bs) {
      std::vector<const GroundingSample*> batch;
      for (size_t i = start; i < std::min(order.size(), start + bs); ++i) batch.push_back(&train_set[order[i]]);
      ad::Tape tape;
      nn::Context ctx{tape, true, &dropout_rng, cfg.model.dropout};
      model.params().zero_grad();
      BatchLoss bl = model.loss(ctx, batch, cfg.loss, margin_rng);
      check_finite(bl);
      tape.backward(bl.total);
      check_finite_grads(params);
      norm_sum += clip_grad_norm(params, cfg.optim.grad_clip);
      opt.step(log.lr);
      const double n = static_cast<double>(batch.size());
      const LossComponents c = bl.values();
      log.loss.margin += n * c.margin;
      log.loss.rank += n * c.rank;
      log.loss.mr += n * c.mr;
      log.loss.clip += n * c.clip;
      log.loss.frame += n * c.frame;
      log.total += n * bl.total.scalar();
      weight += n;
      ++steps;
    }
    log.loss.margin /= weight;
    log.loss.rank /= weight;
    log.loss.mr /= weight;
    log.loss.clip /= weight;
    log.loss.frame /= weight;
    log.total /= weight;
    log.grad_norm = norm_sum / static_cast<double>(steps);

    const bool do_eval = cfg.train.eval_every > 0 &&
                         (epoch % cfg.train.eval_every == 0 || epoch == cfg.optim.epochs) && !val_set.empty();
    bool stop = false;
    if (do_eval) {
      log.val = evaluate_records(predict_records(model, val_set, cfg.eval, EvalMode::Standard), EvalMode::Standard);
      const double map_avg = log.val.contains("mr") ? log.val["mr"]["mAP_avg"].get<double>() : 0.0;
      if (map_avg > result.best_map_avg) {
        result.best_map_avg = map_avg;
        result.best_epoch = epoch;
        result.best_val = log.val;
        if (hooks.write_files) {
          result.best_checkpoint = (out_dir / "best.ckpt").string();
          save_checkpoint(result.best_checkpoint, model, cfg, epoch, log.val);
        }
      }
      const bool r1_ok = cfg.train.stop_r1_at_05 > 0.0 && log.val.contains("mr") &&
                         log.val["mr"]["R1@0.5"].get<double>() >= cfg.train.stop_r1_at_05;
      const bool hd_ok = cfg.train.stop_hd_map > 0.0 && log.val.contains("hd") &&
                         log.val["hd"]["mAP"].get<double>() >= cfg.train.stop_hd_map;
      stop = r1_ok && hd_ok;
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (hooks.write_files) {
      log_file << log.to_json().dump() << '\n';
      log_file.flush();
      if (cfg.train.checkpoint_every > 0 && epoch % cfg.train.checkpoint_every == 0) {
        save_checkpoint((out_dir / ("epoch_" + std::to_string(epoch) + ".ckpt")).string(), model, cfg, epoch,
                        log.val);
      }
    }
    result.log.push_back(log);
    if (hooks.on_epoch) hooks.on_epoch(log);
    if (stop) break;
  }
  if (hooks.write_files) {
    result.last_checkpoint = (out_dir / "last.ckpt").string();
    save_checkpoint(result.last_checkpoint, model, cfg, result.log.back().epoch, result.log.back().val);
  }
  return result;
}

}  // namespace vtg
