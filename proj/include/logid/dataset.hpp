#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "logid/common.hpp"

namespace logid {

enum class EndSide { top, bottom };

std::string to_string(EndSide side);
EndSide end_side_from_string(const std::string& s);

// Identity class of an acquisition. Both ends of one log are distinct
// classes; equality is pairwise on (log_id, end).
struct ClassLabel {
  std::string log_id;
  EndSide end = EndSide::top;

  bool operator==(const ClassLabel&) const = default;
};

// True when the two labels belong to the same physical log but different
// ends. Such pairs are excluded both from triplet mining and from scoring.
inline bool same_log_different_end(const ClassLabel& a, const ClassLabel& b) {
  return a.log_id == b.log_id && a.end != b.end;
}

// One acquisition of one log end.
struct AcquisitionId {
  std::string log_id;
  EndSide end = EndSide::top;
  int acq_index = 0;
  std::string dataset_tag;

  ClassLabel label() const { return {log_id, end}; }
  // "<log>_<end>_<acq>", used in file names and score records
  std::string key() const;

  bool operator==(const AcquisitionId&) const = default;
};

struct ManifestEntry {
  AcquisitionId id;
  std::string image_path;  // relative to the manifest's directory
  std::string mask_path;
  std::string pith_path;
};

struct DatasetManifest {
  std::string dataset_tag;
  std::uint64_t seed = 0;
  int image_size = 0;
  std::filesystem::path root;  // directory the relative paths resolve against
  std::vector<ManifestEntry> entries;

  std::vector<std::string> log_ids() const;  // unique, in first-seen order
};

void save_manifest(const DatasetManifest& m, const std::filesystem::path& file);
DatasetManifest load_manifest(const std::filesystem::path& file);

}  // namespace logid
