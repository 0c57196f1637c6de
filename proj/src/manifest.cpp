#include "mindshot/manifest.hpp"

#include <fstream>

#include "mindshot/hash.hpp"
#include "mindshot/types.hpp"

namespace mindshot {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void write_atomic(const fs::path& path, const std::string& body) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ArtifactError("cannot open for writing: " + tmp.string());
    out << body;
    if (!out) throw ArtifactError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

json to_json(const StageRecord& r) {
  json j;
  j["stage"] = r.stage;
  j["inputs"] = r.inputs;
  j["outputs"] = r.outputs;
  j["metrics"] = r.metrics;
  return j;
}

StageRecord stage_from_json(const json& j) {
  StageRecord r;
  r.stage = j.at("stage").get<std::string>();
  r.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  r.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  r.metrics = j.at("metrics").get<std::map<std::string, double>>();
  return r;
}

}  // namespace

const StageRecord* RunManifest::find(const std::string& stage) const {
  for (const StageRecord& r : stages)
    if (r.stage == stage) return &r;
  return nullptr;
}

void RunManifest::upsert(StageRecord rec) {
  for (StageRecord& r : stages) {
    if (r.stage == rec.stage) {
      r = std::move(rec);
      return;
    }
  }
  stages.push_back(std::move(rec));
}

RunManifest RunManifest::load(const fs::path& run_dir) {
  const fs::path path = run_dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw ArtifactError("no manifest at " + path.string());
  json j;
  try {
    in >> j;
    RunManifest m;
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config_echo = j.at("config");
    for (const json& s : j.at("stages")) m.upsert(stage_from_json(s));
    return m;
  } catch (const json::exception& e) {
    throw ArtifactError("corrupt manifest " + path.string() + ": " + e.what());
  }
}

void RunManifest::save(const fs::path& run_dir) const {
  json j;
  j["tool_version"] = tool_version;
  j["config"] = config_echo;
  j["stages"] = json::array();
  for (const StageRecord& r : stages) j["stages"].push_back(to_json(r));
  write_atomic(run_dir / "manifest.json", j.dump(2) + "\n");
}

std::string file_checksum_hex(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot read: " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  return hex64(h);
}

void record_timing(const fs::path& run_dir, const std::string& stage, double seconds) {
  const fs::path path = run_dir / "timing.json";
  json j = json::object();
  if (fs::exists(path)) {
    std::ifstream in(path);
    try {
      in >> j;
    } catch (const json::exception&) {
      j = json::object();  // sidecar only; never fail a run over it
    }
  }
  j[stage] = seconds;
  write_atomic(path, j.dump(2) + "\n");
}

}  // namespace mindshot
