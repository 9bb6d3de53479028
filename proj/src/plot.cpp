#include "vtg/error.hpp"
#include "vtg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace vtg {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 800, kHeight = 320, kLeft = 50, kRight = 20, kTop = 30;
constexpr double kCurveHeight = 170, kBarHeight = 14;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_svg(const PredictionRecord& r, int top_k) {
  require(r.duration > 0.0, "record " + r.qid + ": duration must be positive");
  const double plot_w = kWidth - kLeft - kRight;
  auto x_of = [&](double t) { return kLeft + plot_w * std::clamp(t / r.duration, 0.0, 1.0); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << kLeft << "\" y=\"18\" font-size=\"13\" font-family=\"sans-serif\">" << escape(r.qid) << ": "
    << escape(r.query) << "</text>\n";

  // saliency curve
  const double base = kTop + kCurveHeight;
  s << "<line x1=\"" << kLeft << "\" y1=\"" << base << "\" x2=\"" << kLeft + plot_w << "\" y2=\"" << base
    << "\" stroke=\"black\"/>\n";
  if (!r.saliency.empty()) {
    const auto [lo_it, hi_it] = std::minmax_element(r.saliency.begin(), r.saliency.end());
    const double lo = *lo_it, range = *hi_it - *lo_it;
    const double clip = r.duration / static_cast<double>(r.saliency.size());
    s << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < r.saliency.size(); ++i) {
      const double v = range > 0.0 ? (r.saliency[i] - lo) / range : 0.5;
      s << x_of((static_cast<double>(i) + 0.5) * clip) << "," << base - v * kCurveHeight << " ";
    }
    s << "\"/>\n";
  }

  // ground truth and predicted windows
  double y = base + 20;
  s << "<text x=\"4\" y=\"" << y + 11 << "\" font-size=\"11\" font-family=\"sans-serif\">GT</text>\n";
  for (const Span& g : r.gt_windows) {
    s << "<rect x=\"" << x_of(g.start) << "\" y=\"" << y << "\" width=\"" << x_of(g.end) - x_of(g.start)
      << "\" height=\"" << kBarHeight << "\" fill=\"#2ca02c\"/>\n";
  }
  const size_t k = std::min(r.windows.size(), static_cast<size_t>(std::max(top_k, 0)));
  for (size_t i = 0; i < k; ++i) {
    y += kBarHeight + 6;
    const ScoredSpan& p = r.windows[i];
    s << "<text x=\"4\" y=\"" << y + 11 << "\" font-size=\"11\" font-family=\"sans-serif\">P" << i + 1 << "</text>\n";
    s << "<rect x=\"" << x_of(p.span.start) << "\" y=\"" << y << "\" width=\"" << x_of(p.span.end) - x_of(p.span.start)
      << "\" height=\"" << kBarHeight << "\" fill=\"#d62728\" fill-opacity=\"" << 0.3 + 0.7 * std::clamp(p.score, 0.0, 1.0)
      << "\"/>\n";
  }

  // time axis over [0, duration]
  const double axis_y = kHeight - 20;
  s << "<line x1=\"" << kLeft << "\" y1=\"" << axis_y << "\" x2=\"" << kLeft + plot_w << "\" y2=\"" << axis_y
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double t = r.duration * i / 4.0;
    s << "<text x=\"" << x_of(t) << "\" y=\"" << axis_y + 14 << "\" font-size=\"10\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" class=\"tick\">" << t << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<std::string> plot_predictions(const std::string& prediction_file, const std::string& out_dir,
                                          const std::vector<std::string>& qids, int top_k) {
  std::ifstream in(prediction_file);
  require(in.good(), "cannot open " + prediction_file, ErrorCode::Io);
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    PredictionRecord r;
    try {
      r = record_from_json(nlohmann::json::parse(line));
      if (!qids.empty() && std::find(qids.begin(), qids.end(), r.qid) == qids.end()) continue;
      const std::string svg = render_svg(r, top_k);
      std::string name = r.qid;
      std::replace_if(name.begin(), name.end(), [](char c) { return c == '/' || c == '\\'; }, '_');
      const std::string path = (fs::path(out_dir) / (name + ".svg")).string();
      std::ofstream(path) << svg;
      written.push_back(path);
    } catch (const std::exception&) {
      continue;  // malformed records are skipped
    }
  }
  return written;
}

}  // namespace vtg
