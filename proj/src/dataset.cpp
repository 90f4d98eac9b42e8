#include "logid/dataset.hpp"

#include <fstream>
#include <unordered_set>

#include <json.hpp>

namespace logid {

using nlohmann::json;

std::string to_string(EndSide side) {
  return side == EndSide::top ? "top" : "bottom";
}

EndSide end_side_from_string(const std::string& s) {
  if (s == "top") return EndSide::top;
  if (s == "bottom") return EndSide::bottom;
  throw InvalidInput("unknown end side: " + s);
}

std::string AcquisitionId::key() const {
  return log_id + "_" + logid::to_string(end) + "_" + std::to_string(acq_index);
}

std::vector<std::string> DatasetManifest::log_ids() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& e : entries) {
    if (seen.insert(e.id.log_id).second) out.push_back(e.id.log_id);
  }
  return out;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& file) {
  json j;
  j["dataset_tag"] = m.dataset_tag;
  j["seed"] = m.seed;
  j["image_size"] = m.image_size;
  j["entries"] = json::array();
  for (const auto& e : m.entries) {
    j["entries"].push_back({{"log_id", e.id.log_id},
                            {"end", to_string(e.id.end)},
                            {"acq_index", e.id.acq_index},
                            {"dataset_tag", e.id.dataset_tag},
                            {"image", e.image_path},
                            {"mask", e.mask_path},
                            {"pith", e.pith_path}});
  }
  std::ofstream os(file);
  if (!os) throw IoError("cannot write manifest: " + file.string());
  os << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot read manifest: " + file.string());
  json j;
  is >> j;
  DatasetManifest m;
  m.dataset_tag = j.at("dataset_tag").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.image_size = j.at("image_size").get<int>();
  m.root = file.parent_path();
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.id.log_id = je.at("log_id").get<std::string>();
    e.id.end = end_side_from_string(je.at("end").get<std::string>());
    e.id.acq_index = je.at("acq_index").get<int>();
    e.id.dataset_tag = je.at("dataset_tag").get<std::string>();
    e.image_path = je.at("image").get<std::string>();
    e.mask_path = je.at("mask").get<std::string>();
    e.pith_path = je.at("pith").get<std::string>();
    m.entries.push_back(std::move(e));
  }
  return m;
}

}  // namespace logid
