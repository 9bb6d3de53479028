#include "vtg/error.hpp"
#include "vtg/harness.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace vtg {

using json = nlohmann::json;

// Layout: "VTGC", uint64 header length, JSON header, then every parameter's
// values as little-endian float64 in header order.

void save_checkpoint(const std::string& path, const GroundingModel& model, const RunConfig& cfg, int epoch,
                     const json& metrics) {
  json params = json::array();
  for (const ad::Parameter* p : model.params().all()) {
    params.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  }
  const json header{{"config", to_json(cfg)},
                    {"epoch", epoch},
                    {"video_dim", model.video_dim()},
                    {"text_dim", model.text_dim()},
                    {"metrics", metrics},
                    {"params", params}};
  const std::string h = header.dump();
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write checkpoint " + path, ErrorCode::Io);
  out.write("VTGC", 4);
  const std::uint64_t len = h.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const ad::Parameter* p : model.params().all()) {
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(p->value.size())));
  }
  require(out.good(), "write failed for checkpoint " + path, ErrorCode::Io);
}

std::unique_ptr<GroundingModel> load_checkpoint(const std::string& path, Checkpoint* info) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open checkpoint " + path, ErrorCode::Io);
  char magic[4];
  in.read(magic, 4);
  require(in.good() && std::memcmp(magic, "VTGC", 4) == 0, path + ": not a checkpoint", ErrorCode::Parse);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  require(in.good() && len < (1ULL << 32), path + ": corrupt checkpoint header", ErrorCode::Parse);
  std::string h(len, '\0');
  in.read(h.data(), static_cast<std::streamsize>(len));
  require(in.good(), path + ": truncated checkpoint header", ErrorCode::Parse);
  json header;
  try {
    header = json::parse(h);
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, path + ": " + e.what());
  }
  Checkpoint ck;
  ck.config = config_from_json(header.at("config"));
  ck.epoch = header.at("epoch").get<int>();
  ck.video_dim = header.at("video_dim").get<Index>();
  ck.text_dim = header.at("text_dim").get<Index>();
  ck.metrics = header.value("metrics", json());
  auto model = std::make_unique<GroundingModel>(ck.config.model, ck.video_dim, ck.text_dim, ck.config.seed);
  std::vector<ad::Parameter*> params = model->params().all();
  const json& listed = header.at("params");
  require(listed.size() == params.size(), path + ": parameter count does not match the configured model",
          ErrorCode::Parse);
  for (size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = *params[i];
    require(listed[i].at("name").get<std::string>() == p.name && listed[i].at("rows").get<Index>() == p.value.rows() &&
                listed[i].at("cols").get<Index>() == p.value.cols(),
            path + ": parameter " + p.name + " does not match the configured model", ErrorCode::Parse);
    in.read(reinterpret_cast<char*>(p.value.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(p.value.size())));
    require(in.good(), path + ": truncated parameter data", ErrorCode::Parse);
  }
  if (info) *info = std::move(ck);
  return model;
}

}  // namespace vtg
