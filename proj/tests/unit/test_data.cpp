#include "oracles.hpp"
#include "tempdir.hpp"
#include "vtg/data.hpp"
#include "vtg/error.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>

using namespace vtg;
using namespace vtg::testing;

namespace {

const std::string kFixtures = VTG_FIXTURE_DIR;

SyntheticConfig small_config(std::uint64_t seed) {
  SyntheticConfig c;
  c.n_samples = 50;
  c.video_len = {20, 40};
  c.text_len = {3, 6};
  c.d_v = 16;
  c.d_t = 8;
  c.seed = seed;
  return c;
}

Matrix sample_matrix() {
  Matrix m(3, 4);
  m << 1, -2, 0.5, 3, 0, 0, 0, 1e-3, -7, 2.25, 1, 1;
  return m;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return static_cast<ErrorCode>(0);
}

}  // namespace

TEST_CASE("synthetic generation is deterministic") {
  const SyntheticDataset a = generate_synthetic(small_config(3)), b = generate_synthetic(small_config(3));
  const SyntheticDataset c = generate_synthetic(small_config(4));
  REQUIRE(a.samples.size() == 50);
  CHECK(a.projection == b.projection);
  bool any_diff = false;
  for (size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].video.embeddings == b.samples[i].video.embeddings);
    CHECK(a.samples[i].text.embeddings == b.samples[i].text.embeddings);
    CHECK(a.samples[i].relevance.indicators == b.samples[i].relevance.indicators);
    CHECK(a.samples[i].saliency_labels == b.samples[i].saliency_labels);
    any_diff = any_diff || a.samples[i].video.embeddings.rows() != c.samples[i].video.embeddings.rows() ||
               a.samples[i].video.embeddings != c.samples[i].video.embeddings;
  }
  CHECK(any_diff);
}

TEST_CASE("synthetic samples are well formed") {
  const SyntheticDataset ds = generate_synthetic(small_config(5));
  for (const GroundingSample& s : ds.samples) {
    const Index lv = s.video.length();
    CHECK(lv >= 20);
    CHECK(lv <= 40);
    CHECK(s.text.length() >= 3);
    CHECK(s.text.length() <= 6);
    CHECK(s.video.dim() == 16);
    CHECK(s.text.dim() == 8);
    CHECK(s.gt_moments.size() >= 1);
    CHECK(s.gt_moments.size() <= 2);
    CHECK(s.duration == doctest::Approx(2.0 * static_cast<double>(lv)));
    CHECK(s.relevance.indicators == brute_relevance(s.gt_moments, lv));
    REQUIRE(s.saliency_labels.has_value());
    for (Index i = 0; i < lv; ++i) {
      CHECK((*s.saliency_labels)[static_cast<size_t>(i)] == (s.relevance.indicators[static_cast<size_t>(i)] ? 4.0 : 0.0));
    }
    REQUIRE(s.gt_windows.size() == s.gt_moments.size());
    for (size_t m = 0; m < s.gt_windows.size(); ++m) {
      // windows sit on clip boundaries, inside the video, separated by a gap
      const double clips_start = s.gt_windows[m].start / 2.0, clips_end = s.gt_windows[m].end / 2.0;
      CHECK(clips_start == std::round(clips_start));
      CHECK(clips_end == std::round(clips_end));
      CHECK(s.gt_windows[m].start >= 0.0);
      CHECK(s.gt_windows[m].end <= s.duration);
      if (m > 0) CHECK(s.gt_windows[m].start > s.gt_windows[m - 1].end);
    }
  }
}

TEST_CASE("zero signal removes the planted pattern") {
  SyntheticConfig c = small_config(6);
  c.signal_strength = 0.0;
  c.n_samples = 200;
  const SyntheticDataset ds = generate_synthetic(c);
  double in_sum = 0, out_sum = 0, in_sq = 0, out_sq = 0;
  double n_in = 0, n_out = 0;
  for (size_t s = 0; s < ds.samples.size(); ++s) {
    const GroundingSample& g = ds.samples[s];
    const Matrix dir = (ds.projection * ds.latents[s].transpose()).transpose();
    for (Index i = 0; i < g.video.length(); ++i) {
      const double proj = g.video.embeddings.row(i).dot(dir.row(0)) / dir.norm();
      if (g.relevance.indicators[static_cast<size_t>(i)]) {
        in_sum += proj;
        in_sq += proj * proj;
        n_in += 1;
      } else {
        out_sum += proj;
        out_sq += proj * proj;
        n_out += 1;
      }
    }
  }
  // projection onto the sample's own pattern is N(0, noise^2) on both sides
  const double sd = c.noise_std;
  CHECK(std::abs(in_sum / n_in) < 4.0 * sd / std::sqrt(n_in));
  CHECK(std::abs(out_sum / n_out) < 4.0 * sd / std::sqrt(n_out));
  CHECK(std::sqrt(in_sq / n_in) == doctest::Approx(sd).epsilon(0.1));
  CHECK(std::sqrt(out_sq / n_out) == doctest::Approx(sd).epsilon(0.1));
}

TEST_CASE("planted signal is separable by a nearest-centroid rule") {
  SyntheticConfig c = small_config(7);
  c.signal_strength = 5.0;
  c.noise_std = 0.1;
  c.d_v = 64;
  c.d_t = 32;
  c.n_samples = 40;
  c.distractor_rate = 0.0;
  const SyntheticDataset ds = generate_synthetic(c);
  CHECK(nearest_centroid_accuracy(ds, 5.0, 1000) >= 0.99);
}

TEST_CASE("relevant-clip coverage follows the configured fraction") {
  SyntheticConfig c = small_config(0);
  c.video_len = {40, 40};
  c.n_samples = 20;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    c.seed = seed;
    const SyntheticDataset ds = generate_synthetic(c);
    double relevant = 0;
    for (const GroundingSample& s : ds.samples) {
      for (int r : s.relevance.indicators) relevant += r;
    }
    const double n = 40.0 * 20.0;
    const double sigma = std::sqrt(n * c.coverage * (1 - c.coverage));
    CHECK(std::abs(relevant - n * c.coverage) < 3.0 * sigma);
  }
}

TEST_CASE("synthetic config validation") {
  SyntheticConfig c;
  c.video_len = {5, 3};
  CHECK_THROWS_AS(generate_synthetic(c), Error);
  c = SyntheticConfig{};
  c.n_samples = 0;
  CHECK_THROWS_AS(generate_synthetic(c), Error);
  c = SyntheticConfig{};
  c.noise_std = -1;
  CHECK_THROWS_AS(generate_synthetic(c), Error);
  c = SyntheticConfig{};
  c.moments_per_video = {3, 30};
  c.video_len = {4, 4};
  CHECK_THROWS_AS(generate_synthetic(c), Error);
}

TEST_CASE("annotation fixture round trip") {
  const auto records = load_annotations(kFixtures + "/annotations.jsonl");
  REQUIRE(records.size() == 3);
  CHECK(records[0].qid == "2579");
  CHECK(records[0].qid_is_number);
  CHECK(records[1].qid == "q-7");
  CHECK_FALSE(records[1].has_saliency());
  CHECK(records[2].moments().size() == 1);
  CHECK(records[2].moments()[0].center == doctest::Approx(0.5));
  CHECK(records[2].moments()[0].width == doctest::Approx(1.0));
  const auto sal = records[0].saliency_per_clip(75);
  REQUIRE(sal.has_value());
  CHECK((*sal)[1] == doctest::Approx(4.0));
  CHECK((*sal)[0] == doctest::Approx(5.0 / 3.0));
  CHECK((*sal)[10] == 0.0);

  TempDir dir;
  save_annotations(dir.file("a.jsonl"), records);
  const auto again = load_annotations(dir.file("a.jsonl"));
  REQUIRE(again.size() == 3);
  for (size_t i = 0; i < 3; ++i) CHECK(serialize_annotation(again[i]) == serialize_annotation(records[i]));
}

TEST_CASE("annotation errors") {
  TempDir dir;
  {
    std::ofstream f(dir.file("bad.jsonl"));
    f << R"({"qid": 1, "query": "q", "vid": "v", "duration": 10, "relevant_windows": [[0, 5]]})" << "\n\n";
    f << "{not json\n";
  }
  try {
    load_annotations(dir.file("bad.jsonl"));
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Parse);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK(code_of([] {
          parse_annotation(R"({"qid": 1, "query": "q", "vid": "v", "duration": 10, "relevant_windows": [[0, 12]]})");
        }) == ErrorCode::Parse);
  CHECK(code_of([] { parse_annotation(R"({"qid": 1, "query": "q", "vid": "v", "duration": 10})"); }) ==
        ErrorCode::Parse);
  CHECK(code_of([] { load_annotations("/nonexistent/x.jsonl"); }) == ErrorCode::Io);
}

TEST_CASE("feature files") {
  TempDir dir;
  const Matrix m = sample_matrix();
  write_feature_bin(dir.file("a.bin"), m);
  CHECK(read_feature_bin(dir.file("a.bin")) == m.cast<float>().cast<double>());
  const Matrix m32 = m.cast<float>().cast<double>();
  write_npy(dir.file("a.npy"), m);
  CHECK(read_npy(dir.file("a.npy")) == m32);
  for (bool compress : {false, true}) {
    write_npz(dir.file("a.npz"), {{"other", Matrix::Ones(2, 2)}, {"features", m}}, compress);
    CHECK(read_npz(dir.file("a.npz")) == m32);
    CHECK(read_npz(dir.file("a.npz"), "other") == Matrix::Ones(2, 2));
    CHECK(code_of([&] { read_npz(dir.file("a.npz"), "missing"); }) != static_cast<ErrorCode>(0));
  }
  Matrix big = Matrix::Random(75, 2816);
  write_feature_bin(dir.file("big.bin"), big);
  const Matrix back = read_feature_bin(dir.file("big.bin"));
  CHECK(back.rows() == 75);
  CHECK(back.cols() == 2816);
  {
    std::ofstream f(dir.file("trunc.bin"), std::ios::binary);
    f << "VTGF";
  }
  CHECK(code_of([&] { read_feature_bin(dir.file("trunc.bin")); }) == ErrorCode::Parse);
}

TEST_CASE("numpy-written files") {
  Matrix expect(3, 4);
  for (Index i = 0; i < 12; ++i) expect.data()[i] = static_cast<double>(i) * 0.25 - 1.0;
  CHECK(read_npy(kFixtures + "/np_f64.npy") == expect);
  CHECK(read_npy(kFixtures + "/np_f32.npy") == expect);
  CHECK(read_npz(kFixtures + "/np_stored.npz") == expect);
  CHECK(read_npz(kFixtures + "/np_stored.npz", "other") == Matrix::Ones(2, 2));
  CHECK(read_npz(kFixtures + "/np_deflated.npz", "last_hidden_state") == expect);
  CHECK(read_npz(kFixtures + "/np_deflated.npz") == expect);
}

TEST_CASE("manifest loading") {
  TempDir dir;
  std::filesystem::create_directories(dir.path() / "video");
  std::filesystem::create_directories(dir.path() / "text");
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  auto random = [&](Index r, Index c) {
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
  };
  write_feature_bin(dir.file("video/v1.bin"), random(75, 12));
  write_npy(dir.file("video/v2.npy"), random(10, 12));
  write_npz(dir.file("video/v3.npz"), {{"features", random(5, 9)}}, true);
  write_npz(dir.file("text/1.npz"), {{"features", random(6, 4)}}, false);
  write_npz(dir.file("text/2.npz"), {{"features", random(3, 4)}}, true);
  write_npy(dir.file("text/3.npy"), random(2, 4));
  {
    std::ofstream f(dir.file("ann.jsonl"));
    f << R"({"qid": 1, "query": "a", "vid": "v1", "duration": 150, "relevant_windows": [[0, 150]]})" << '\n';
    f << R"({"qid": 2, "query": "b", "vid": "v2", "duration": 20, "relevant_windows": [[2, 6]]})" << '\n';
    f << R"({"qid": 3, "query": "c", "vid": "v3", "duration": 10, "relevant_windows": [[2, 6]]})" << '\n';
    f << R"({"qid": 4, "query": "d", "vid": "v9", "duration": 10, "relevant_windows": [[2, 6]]})" << '\n';
  }
  DatasetManifest m;
  m.annotation_path = "ann.jsonl";
  m.video_feature_dir = "video";
  m.text_feature_dir = "text";
  m.video_dim = 12;
  m.text_dim = 4;
  setenv("VTG_DATA_ROOT", dir.path().c_str(), 1);
  CHECK(m.resolve("ann.jsonl") == dir.file("ann.jsonl"));
  CHECK(m.resolve("/abs/x") == "/abs/x");
  const LoadReport rep = load_dataset(m);
  unsetenv("VTG_DATA_ROOT");
  REQUIRE(rep.samples.size() == 2);
  CHECK(rep.errors.size() == 2);  // v3 has the wrong width, v9 is missing
  CHECK(rep.samples[0].video.length() == 75);
  CHECK(rep.samples[0].relevance.indicators == std::vector<int>(75, 1));
  for (Index r = 0; r < 75; ++r) CHECK(std::abs(rep.samples[0].video.embeddings.row(r).norm() - 1.0) < 1e-6);
  CHECK(rep.samples[1].video.length() == 10);
  CHECK_FALSE(rep.samples[1].saliency_labels.has_value());

  m.video_dim = 9;
  m.annotation_path = dir.file("ann.jsonl");
  m.video_feature_dir = dir.file("video");
  CHECK(code_of([&] { load_features(m, "v1", FeatureKind::Video); }) == ErrorCode::Shape);
  CHECK(code_of([&] { load_features(m, "nope", FeatureKind::Video); }) == ErrorCode::Io);
  CHECK(load_features(m, "v3", FeatureKind::Video).length() == 5);
}
