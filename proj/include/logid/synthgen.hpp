#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "logid/common.hpp"
#include "logid/dataset.hpp"

namespace logid::synthgen {

enum class BackgroundStyle { forest, sawmill, studio };

std::string to_string(BackgroundStyle s);

// Geometry and texture of one log end. Each end of a log gets an
// independent LogSpec: the two ends of a real log show no usable visual
// similarity, so none is modeled.
struct LogSpec {
  std::string log_id;
  EndSide end = EndSide::top;              // which end of the log this is
  int ring_count = 0;                      // >= 3
  std::vector<double> ring_width_profile;  // pixels, one entry per ring
  cv::Point2d pith_offset;                 // relative to CS center
  double cs_radius = 0.0;                  // pixels
  double shape_irregularity = 0.0;         // [0,1]
  std::uint64_t texture_seed = 0;
};

// Nuisance parameters of a single acquisition.
struct AcquisitionSpec {
  double rotation_deg = 0.0;  // [0,360)
  cv::Point2d translation;    // pixels
  BackgroundStyle background_style = BackgroundStyle::studio;
  double illumination_gain = 1.0;  // [0.5, 2.0]
  double sawcut_noise = 0.0;       // [0,1]
};

struct GroundTruth {
  cv::Mat1b mask;    // 0/1, exactly the CS pixels
  cv::Point2d pith;  // pixel coordinates of the ring center
  ClassLabel class_label;
};

// Throws InvalidInput when the spec violates its invariants.
void validate(const LogSpec& spec);
void validate(const AcquisitionSpec& acq);

// Renders one acquisition. Pure function of (spec, acq, image_size, seed);
// `seed` drives the per-acquisition noise (background, saw marks, grain).
// Requires image_size >= 2*cs_radius + 20.
std::pair<cv::Mat3b, GroundTruth> generate_end(const LogSpec& spec,
                                               const AcquisitionSpec& acq,
                                               int image_size,
                                               std::uint64_t seed);

// Appearance ranges shared by all acquisitions of one dataset. This is the
// only dataset-level shift that is modeled.
struct DatasetProfile {
  BackgroundStyle background = BackgroundStyle::studio;
  double gain_lo = 0.9, gain_hi = 1.1;
  double sawcut_lo = 0.1, sawcut_hi = 0.4;
};

// Maps a dataset tag to its profile. Tags FH/FL resolve to forest,
// SM to sawmill, R/S to studio (an optional "HLDB_" prefix is ignored);
// anything else gets a neutral studio profile.
DatasetProfile profile_for_tag(const std::string& tag);

struct GeneratorConfig {
  int n_logs = 8;
  int acquisitions_per_end = 4;
  std::string dataset_tag = "SYN";
  std::uint64_t seed = 1;
  int image_size = 512;
};

// Samples a plausible LogSpec for the given image size. Used by
// generate_dataset and by tests that need arbitrary specs.
LogSpec random_log_spec(const std::string& log_id, int image_size, Rng& rng);

// Writes images, masks, pith sidecars and the manifest under
// <root>/<dataset_tag>/. Requires n_logs >= 8 so that 4 folds stay nonempty.
DatasetManifest generate_dataset(const GeneratorConfig& cfg,
                                 const std::filesystem::path& root);

}  // namespace logid::synthgen
