#include "vtg/data.hpp"

#include "vtg/error.hpp"

#include <json.hpp>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace vtg {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// synthetic

void SyntheticConfig::validate() const {
  require(n_samples >= 1, "synthetic: n_samples must be positive");
  require(video_len.min >= 2 && video_len.min <= video_len.max, "synthetic: invalid video length range");
  require(text_len.min >= 1 && text_len.min <= text_len.max, "synthetic: invalid text length range");
  require(d_v >= 1 && d_t >= 1, "synthetic: feature dims must be positive");
  require(std::isfinite(signal_strength) && signal_strength >= 0.0, "synthetic: signal_strength must be >= 0");
  require(std::isfinite(noise_std) && noise_std >= 0.0, "synthetic: noise_std must be >= 0");
  require(moments_per_video.min >= 1 && moments_per_video.min <= moments_per_video.max,
          "synthetic: invalid moments-per-video range");
  require(2 * moments_per_video.max - 1 <= video_len.min,
          "synthetic: videos too short for the requested number of moments");
  require(distractor_rate >= 0.0 && distractor_rate <= 1.0, "synthetic: distractor_rate must be in [0,1]");
  require(coverage > 0.0 && coverage < 1.0, "synthetic: coverage must be in (0,1)");
  require(clip_duration > 0.0, "synthetic: clip_duration must be positive");
}

namespace {

Matrix gaussian(Index rows, Index cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = std * n(rng);
  return m;
}

// Random composition of `total` into `parts` pieces, each >= `floor`.
std::vector<int> compose(int total, int parts, int floor, std::mt19937_64& rng) {
  std::vector<int> out(static_cast<size_t>(parts), floor);
  int rest = total - parts * floor;
  std::uniform_int_distribution<int> pick(0, parts - 1);
  for (int i = 0; i < rest; ++i) ++out[static_cast<size_t>(pick(rng))];
  return out;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  SyntheticDataset ds;
  ds.projection = gaussian(cfg.d_v, cfg.d_t, 1.0 / std::sqrt(static_cast<double>(cfg.d_t)), rng);
  std::uniform_int_distribution<int> video_len(cfg.video_len.min, cfg.video_len.max);
  std::uniform_int_distribution<int> text_len(cfg.text_len.min, cfg.text_len.max);
  std::uniform_int_distribution<int> moment_count(cfg.moments_per_video.min, cfg.moments_per_video.max);
  std::bernoulli_distribution distractor(cfg.distractor_rate);

  for (int s = 0; s < cfg.n_samples; ++s) {
    const int lv = video_len(rng);
    const int lt = text_len(rng);
    const int k = moment_count(rng);
    Matrix q = gaussian(1, cfg.d_t, 1.0, rng);

    // Relevant clip count, split into k runs separated by >= 1 clip.
    std::binomial_distribution<int> binom(lv, cfg.coverage);
    const int relevant = std::clamp(binom(rng), k, lv - (k - 1));
    std::vector<int> runs = compose(relevant, k, 1, rng);
    std::vector<int> gaps = compose(lv - relevant - (k - 1), k + 1, 0, rng);
    for (int i = 1; i < k; ++i) ++gaps[static_cast<size_t>(i)];

    GroundingSample sample;
    sample.qid = "syn" + std::to_string(s);
    sample.vid = "synv" + std::to_string(s);
    sample.query = "synthetic query " + std::to_string(s);
    sample.duration = lv * cfg.clip_duration;
    std::vector<int> inside(static_cast<size_t>(lv), 0);
    int pos = gaps[0];
    for (int i = 0; i < k; ++i) {
      const int start = pos;
      const int end = pos + runs[static_cast<size_t>(i)];
      for (int c = start; c < end; ++c) inside[static_cast<size_t>(c)] = 1;
      sample.gt_moments.push_back(span_to_center_width(static_cast<double>(start) / lv, static_cast<double>(end) / lv));
      sample.gt_windows.push_back(Span{start * cfg.clip_duration, end * cfg.clip_duration});
      pos = end + gaps[static_cast<size_t>(i + 1)];
    }

    Matrix signal = cfg.signal_strength * (ds.projection * q.transpose()).transpose();
    Matrix video = gaussian(lv, cfg.d_v, cfg.noise_std, rng);
    for (int c = 0; c < lv; ++c) {
      if (inside[static_cast<size_t>(c)]) {
        video.row(c) += signal;
      } else if (distractor(rng)) {
        Matrix other = gaussian(1, cfg.d_t, 1.0, rng);
        video.row(c) += cfg.signal_strength * (ds.projection * other.transpose()).transpose();
      }
    }
    Matrix text = gaussian(lt, cfg.d_t, cfg.noise_std, rng);
    text.rowwise() += q.row(0);

    sample.video = FeatureSequence(std::move(video));
    sample.text = FeatureSequence(std::move(text));
    sample.relevance.indicators = inside;
    std::vector<double> labels(static_cast<size_t>(lv));
    for (int c = 0; c < lv; ++c) labels[static_cast<size_t>(c)] = inside[static_cast<size_t>(c)] ? 4.0 : 0.0;
    sample.saliency_labels = std::move(labels);
    ds.samples.push_back(std::move(sample));
    ds.latents.push_back(std::move(q));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// annotations

std::vector<Moment> AnnotationRecord::moments() const {
  std::vector<Moment> out;
  for (const Span& w : relevant_windows) out.push_back(span_to_center_width(w.start / duration, w.end / duration));
  return out;
}

std::optional<std::vector<double>> AnnotationRecord::saliency_per_clip(Index clip_count) const {
  if (!saliency_scores) return std::nullopt;
  std::vector<double> out(static_cast<size_t>(clip_count), 0.0);
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  const auto& scores = *saliency_scores;
  if (relevant_clip_ids) {
    for (size_t i = 0; i < relevant_clip_ids->size(); ++i) {
      const int c = (*relevant_clip_ids)[i];
      if (c >= 0 && c < clip_count) out[static_cast<size_t>(c)] = mean(scores[i]);
    }
  } else {
    for (size_t i = 0; i < scores.size() && static_cast<Index>(i) < clip_count; ++i) out[i] = mean(scores[i]);
  }
  return out;
}

AnnotationRecord parse_annotation(const std::string& line, size_t line_number) {
  const std::string where = "annotation line " + std::to_string(line_number) + ": ";
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, where + "malformed JSON (" + e.what() + ")");
  }
  try {
    require(j.is_object(), where + "record must be an object", ErrorCode::Parse);
    AnnotationRecord r;
    const json& qid = j.at("qid");
    if (qid.is_number_integer()) {
      r.qid = std::to_string(qid.get<long long>());
      r.qid_is_number = true;
    } else {
      r.qid = qid.get<std::string>();
    }
    r.query = j.at("query").get<std::string>();
    r.vid = j.at("vid").get<std::string>();
    r.duration = j.at("duration").get<double>();
    require(std::isfinite(r.duration) && r.duration > 0.0, where + "duration must be positive", ErrorCode::Parse);
    for (const json& w : j.at("relevant_windows")) {
      require(w.is_array() && w.size() == 2, where + "window must be [start, end]", ErrorCode::Parse);
      Span s{w[0].get<double>(), w[1].get<double>()};
      require(s.start >= 0.0 && s.end <= r.duration && s.start < s.end,
              where + "window outside [0, duration] or empty", ErrorCode::Parse);
      r.relevant_windows.push_back(s);
    }
    if (j.contains("relevant_clip_ids") && !j["relevant_clip_ids"].is_null()) {
      r.relevant_clip_ids = j["relevant_clip_ids"].get<std::vector<int>>();
    }
    if (j.contains("saliency_scores") && !j["saliency_scores"].is_null()) {
      std::vector<std::vector<double>> scores;
      for (const json& s : j["saliency_scores"]) {
        if (s.is_array()) {
          scores.push_back(s.get<std::vector<double>>());
        } else {
          scores.push_back({s.get<double>()});
        }
      }
      if (r.relevant_clip_ids) {
        require(scores.size() == r.relevant_clip_ids->size(),
                where + "saliency_scores and relevant_clip_ids differ in length", ErrorCode::Parse);
      }
      r.saliency_scores = std::move(scores);
    }
    return r;
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, where + e.what());
  }
}

std::vector<AnnotationRecord> load_annotations(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open annotation file " + path, ErrorCode::Io);
  std::vector<AnnotationRecord> out;
  std::string line;
  size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_annotation(line, n));
  }
  return out;
}

std::string serialize_annotation(const AnnotationRecord& r) {
  json j;
  if (r.qid_is_number) {
    j["qid"] = std::stoll(r.qid);
  } else {
    j["qid"] = r.qid;
  }
  j["query"] = r.query;
  j["vid"] = r.vid;
  j["duration"] = r.duration;
  json windows = json::array();
  for (const Span& s : r.relevant_windows) windows.push_back({s.start, s.end});
  j["relevant_windows"] = windows;
  if (r.relevant_clip_ids) j["relevant_clip_ids"] = *r.relevant_clip_ids;
  if (r.saliency_scores) j["saliency_scores"] = *r.saliency_scores;
  return j.dump();
}

void save_annotations(const std::string& path, const std::vector<AnnotationRecord>& records) {
  std::ofstream out(path);
  require(out.good(), "cannot write annotation file " + path, ErrorCode::Io);
  for (const AnnotationRecord& r : records) out << serialize_annotation(r) << '\n';
}

// ---------------------------------------------------------------------------
// feature files

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open " + path, ErrorCode::Io);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write " + path, ErrorCode::Io);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), "write failed for " + path, ErrorCode::Io);
}

template <typename T>
T get_le(const std::string& buf, size_t off) {
  require(off + sizeof(T) <= buf.size(), "truncated binary data", ErrorCode::Parse);
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  return v;
}

template <typename T>
void put_le(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));
}

std::string npy_bytes(const Matrix& m) {
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(m.rows()) + ", " +
                       std::to_string(m.cols()) + "), }";
  const size_t base = 10;
  size_t total = base + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');
  std::string out("\x93NUMPY\x01\x00", 8);
  put_le<uint16_t>(out, static_cast<uint16_t>(header.size()));
  out += header;
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) put_le<float>(out, static_cast<float>(m(i, j)));
  return out;
}

Matrix parse_npy(const std::string& buf, const std::string& what) {
  require(buf.size() >= 10 && buf.compare(0, 6, "\x93NUMPY") == 0, what + ": not an npy array", ErrorCode::Parse);
  const int major = static_cast<unsigned char>(buf[6]);
  size_t header_len, off;
  if (major == 1) {
    header_len = get_le<uint16_t>(buf, 8);
    off = 10;
  } else {
    header_len = get_le<uint32_t>(buf, 8);
    off = 12;
  }
  require(off + header_len <= buf.size(), what + ": truncated npy header", ErrorCode::Parse);
  const std::string header = buf.substr(off, header_len);
  off += header_len;
  auto field = [&](const std::string& key) {
    const size_t k = header.find("'" + key + "'");
    require(k != std::string::npos, what + ": npy header lacks " + key, ErrorCode::Parse);
    return header.substr(header.find(':', k) + 1);
  };
  const std::string descr = field("descr");
  const bool f4 = descr.find("<f4") != std::string::npos;
  const bool f8 = descr.find("<f8") != std::string::npos;
  require(f4 || f8, what + ": only little-endian float32/float64 arrays are supported", ErrorCode::Parse);
  require(field("fortran_order").find("False") < 8, what + ": Fortran-ordered arrays are not supported",
          ErrorCode::Parse);
  std::string shape = field("shape");
  shape = shape.substr(shape.find('(') + 1);
  shape = shape.substr(0, shape.find(')'));
  std::vector<Index> dims;
  std::stringstream ss(shape);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.find_first_of("0123456789") != std::string::npos) dims.push_back(std::stoll(tok));
  }
  require(dims.size() == 1 || dims.size() == 2 || (dims.size() == 3 && dims[0] == 1),
          what + ": expected a 2-D array", ErrorCode::Parse);
  const Index rows = dims.size() == 1 ? 1 : dims[dims.size() - 2];
  const Index cols = dims.back();
  const size_t elem = f4 ? 4 : 8;
  require(off + static_cast<size_t>(rows * cols) * elem <= buf.size(), what + ": truncated npy data",
          ErrorCode::Parse);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      const size_t p = off + static_cast<size_t>(i * cols + j) * elem;
      m(i, j) = f4 ? static_cast<double>(get_le<float>(buf, p)) : get_le<double>(buf, p);
    }
  }
  return m;
}

std::string inflate_raw(const std::string& in, size_t expected, const std::string& what) {
  std::string out(expected, '\0');
  z_stream zs{};
  require(inflateInit2(&zs, -MAX_WBITS) == Z_OK, what + ": inflate init failed", ErrorCode::Internal);
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  require(rc == Z_STREAM_END && zs.total_out == expected, what + ": corrupt deflate stream", ErrorCode::Parse);
  return out;
}

std::string deflate_raw(const std::string& in) {
  z_stream zs{};
  require(deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, -MAX_WBITS, 8, Z_DEFAULT_STRATEGY) == Z_OK,
          "deflate init failed", ErrorCode::Internal);
  std::string out(deflateBound(&zs, static_cast<uLong>(in.size())), '\0');
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  require(rc == Z_STREAM_END, "deflate failed", ErrorCode::Internal);
  out.resize(zs.total_out);
  return out;
}

}  // namespace

void write_feature_bin(const std::string& path, const Matrix& m) {
  std::string out("VTGF", 4);
  put_le<uint32_t>(out, 1);
  put_le<uint64_t>(out, static_cast<uint64_t>(m.rows()));
  put_le<uint64_t>(out, static_cast<uint64_t>(m.cols()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) put_le<float>(out, static_cast<float>(m(i, j)));
  write_file(path, out);
}

Matrix read_feature_bin(const std::string& path) {
  const std::string buf = read_file(path);
  require(buf.size() >= 24 && buf.compare(0, 4, "VTGF") == 0, path + ": not a feature file", ErrorCode::Parse);
  require(get_le<uint32_t>(buf, 4) == 1, path + ": unsupported feature file version", ErrorCode::Parse);
  const auto rows = static_cast<Index>(get_le<uint64_t>(buf, 8));
  const auto cols = static_cast<Index>(get_le<uint64_t>(buf, 16));
  require(buf.size() == 24 + static_cast<size_t>(rows * cols) * 4, path + ": size does not match header",
          ErrorCode::Parse);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = get_le<float>(buf, 24 + static_cast<size_t>(i * cols + j) * 4);
  return m;
}

void write_npy(const std::string& path, const Matrix& m) { write_file(path, npy_bytes(m)); }

Matrix read_npy(const std::string& path) { return parse_npy(read_file(path), path); }

void write_npz(const std::string& path, const std::vector<std::pair<std::string, Matrix>>& arrays, bool compress) {
  std::string out, central;
  for (const auto& [key, m] : arrays) {
    const std::string name = key + ".npy";
    const std::string raw = npy_bytes(m);
    const std::string data = compress ? deflate_raw(raw) : raw;
    const auto crc = static_cast<uint32_t>(crc32(0, reinterpret_cast<const Bytef*>(raw.data()),
                                                 static_cast<uInt>(raw.size())));
    const auto offset = static_cast<uint32_t>(out.size());
    const uint16_t method = compress ? 8 : 0;
    put_le<uint32_t>(out, 0x04034b50);
    put_le<uint16_t>(out, 20);
    put_le<uint16_t>(out, 0);
    put_le<uint16_t>(out, method);
    put_le<uint32_t>(out, 0);  // time, date
    put_le<uint32_t>(out, crc);
    put_le<uint32_t>(out, static_cast<uint32_t>(data.size()));
    put_le<uint32_t>(out, static_cast<uint32_t>(raw.size()));
    put_le<uint16_t>(out, static_cast<uint16_t>(name.size()));
    put_le<uint16_t>(out, 0);
    out += name;
    out += data;

    put_le<uint32_t>(central, 0x02014b50);
    put_le<uint16_t>(central, 20);
    put_le<uint16_t>(central, 20);
    put_le<uint16_t>(central, 0);
    put_le<uint16_t>(central, method);
    put_le<uint32_t>(central, 0);
    put_le<uint32_t>(central, crc);
    put_le<uint32_t>(central, static_cast<uint32_t>(data.size()));
    put_le<uint32_t>(central, static_cast<uint32_t>(raw.size()));
    put_le<uint16_t>(central, static_cast<uint16_t>(name.size()));
    put_le<uint16_t>(central, 0);  // extra
    put_le<uint16_t>(central, 0);  // comment
    put_le<uint16_t>(central, 0);  // disk
    put_le<uint16_t>(central, 0);  // internal attrs
    put_le<uint32_t>(central, 0);  // external attrs
    put_le<uint32_t>(central, offset);
    central += name;
  }
  const auto cd_offset = static_cast<uint32_t>(out.size());
  out += central;
  put_le<uint32_t>(out, 0x06054b50);
  put_le<uint16_t>(out, 0);
  put_le<uint16_t>(out, 0);
  put_le<uint16_t>(out, static_cast<uint16_t>(arrays.size()));
  put_le<uint16_t>(out, static_cast<uint16_t>(arrays.size()));
  put_le<uint32_t>(out, static_cast<uint32_t>(central.size()));
  put_le<uint32_t>(out, cd_offset);
  put_le<uint16_t>(out, 0);
  write_file(path, out);
}

Matrix read_npz(const std::string& path, const std::string& key) {
  const std::string buf = read_file(path);
  require(buf.size() >= 22, path + ": not a zip archive", ErrorCode::Parse);
  size_t eocd = std::string::npos;
  for (size_t p = buf.size() - 22 + 1; p-- > 0;) {
    if (get_le<uint32_t>(buf, p) == 0x06054b50) {
      eocd = p;
      break;
    }
  }
  require(eocd != std::string::npos, path + ": zip directory not found", ErrorCode::Parse);
  const uint16_t entries = get_le<uint16_t>(buf, eocd + 10);
  size_t p = get_le<uint32_t>(buf, eocd + 16);

  struct Entry {
    std::string name;
    uint16_t method;
    uint64_t comp, raw, offset;
  };
  std::vector<Entry> list;
  for (uint16_t e = 0; e < entries; ++e) {
    require(get_le<uint32_t>(buf, p) == 0x02014b50, path + ": corrupt zip directory", ErrorCode::Parse);
    Entry en;
    en.method = get_le<uint16_t>(buf, p + 10);
    en.comp = get_le<uint32_t>(buf, p + 20);
    en.raw = get_le<uint32_t>(buf, p + 24);
    const uint16_t name_len = get_le<uint16_t>(buf, p + 28);
    const uint16_t extra_len = get_le<uint16_t>(buf, p + 30);
    const uint16_t comment_len = get_le<uint16_t>(buf, p + 32);
    en.offset = get_le<uint32_t>(buf, p + 42);
    en.name = buf.substr(p + 46, name_len);
    // zip64 sizes live in the extra field
    size_t x = p + 46 + name_len;
    const size_t x_end = x + extra_len;
    while (x + 4 <= x_end) {
      const uint16_t id = get_le<uint16_t>(buf, x);
      const uint16_t len = get_le<uint16_t>(buf, x + 2);
      if (id == 0x0001) {
        size_t q = x + 4;
        if (en.raw == 0xFFFFFFFFu) { en.raw = get_le<uint64_t>(buf, q); q += 8; }
        if (en.comp == 0xFFFFFFFFu) { en.comp = get_le<uint64_t>(buf, q); q += 8; }
        if (en.offset == 0xFFFFFFFFu) en.offset = get_le<uint64_t>(buf, q);
      }
      x += 4 + len;
    }
    list.push_back(en);
    p += 46 + name_len + extra_len + comment_len;
  }
  require(!list.empty(), path + ": empty archive", ErrorCode::Parse);
  const Entry* chosen = nullptr;
  const std::string wanted = (key.empty() ? std::string("features") : key) + ".npy";
  for (const Entry& en : list) {
    if (en.name == wanted) chosen = &en;
  }
  if (!chosen) {
    require(key.empty(), path + ": no array named " + key, ErrorCode::Parse);
    chosen = &list.front();
  }
  const size_t local = chosen->offset;
  require(get_le<uint32_t>(buf, local) == 0x04034b50, path + ": corrupt local header", ErrorCode::Parse);
  const size_t data = local + 30 + get_le<uint16_t>(buf, local + 26) + get_le<uint16_t>(buf, local + 28);
  require(data + chosen->comp <= buf.size(), path + ": truncated archive", ErrorCode::Parse);
  const std::string payload = buf.substr(data, chosen->comp);
  std::string raw;
  if (chosen->method == 0) {
    raw = payload;
  } else {
    require(chosen->method == 8, path + ": unsupported zip compression", ErrorCode::Parse);
    raw = inflate_raw(payload, chosen->raw, path);
  }
  return parse_npy(raw, path + ":" + chosen->name);
}

void l2_normalize_rows(Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n > 0.0) m.row(i) /= n;
  }
}

// ---------------------------------------------------------------------------
// manifests

std::string DatasetManifest::resolve(const std::string& path) const {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  if (const char* root = std::getenv("VTG_DATA_ROOT"); root && *root) return (fs::path(root) / path).string();
  return path;
}

FeatureSequence load_features(const DatasetManifest& manifest, const std::string& id, FeatureKind kind) {
  const fs::path dir = manifest.resolve(kind == FeatureKind::Video ? manifest.video_feature_dir
                                                                   : manifest.text_feature_dir);
  Matrix m;
  if (fs::exists(dir / (id + ".bin"))) {
    m = read_feature_bin((dir / (id + ".bin")).string());
  } else if (fs::exists(dir / (id + ".npy"))) {
    m = read_npy((dir / (id + ".npy")).string());
  } else if (fs::exists(dir / (id + ".npz"))) {
    m = read_npz((dir / (id + ".npz")).string(), manifest.npz_key);
  } else {
    fail(ErrorCode::Io, "no feature file for " + id + " in " + dir.string());
  }
  const Index expected = kind == FeatureKind::Video ? manifest.video_dim : manifest.text_dim;
  require(expected == 0 || m.cols() == expected,
          "feature dim mismatch for " + id + ": got " + std::to_string(m.cols()) + ", expected " +
              std::to_string(expected),
          ErrorCode::Shape);
  require(m.rows() >= 1, "empty feature file for " + id, ErrorCode::Shape);
  if (manifest.l2_normalize) l2_normalize_rows(m);
  return FeatureSequence(std::move(m));
}

GroundingSample make_sample(const AnnotationRecord& record, FeatureSequence video, FeatureSequence text) {
  GroundingSample s;
  s.qid = record.qid;
  s.vid = record.vid;
  s.query = record.query;
  s.duration = record.duration;
  s.gt_windows = record.relevant_windows;
  s.gt_moments = record.moments();
  s.saliency_labels = record.saliency_per_clip(video.length());
  s.relevance = relevance_from_moments(s.gt_moments, video.length());
  s.video = std::move(video);
  s.text = std::move(text);
  return s;
}

LoadReport load_dataset(const DatasetManifest& manifest) {
  LoadReport report;
  for (const AnnotationRecord& r : load_annotations(manifest.resolve(manifest.annotation_path))) {
    try {
      FeatureSequence video = load_features(manifest, r.vid, FeatureKind::Video);
      FeatureSequence text = load_features(manifest, r.qid, FeatureKind::Text);
      report.samples.push_back(make_sample(r, std::move(video), std::move(text)));
    } catch (const Error& e) {
      report.errors.push_back(r.qid + ": " + e.what());
    }
  }
  return report;
}

}  // namespace vtg
