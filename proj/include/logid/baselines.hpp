#pragma once

#include <filesystem>
#include <vector>

#include <opencv2/core.hpp>

#include "logid/common.hpp"
#include "logid/segmentation.hpp"

namespace logid::baselines {

struct PithEstimate {
  cv::Point2d position;    // pixel coordinates in the patch frame
  double confidence = 0.0; // [0,1]; 0 means degenerate texture fallback
};

// Ring-orientation voting: structure-tensor orientations cast line votes,
// the accumulator peak is the pith. A texture without orientation energy
// falls back to the mask centroid with confidence 0.
PithEstimate estimate_pith(const seg::SquarePatch& patch, const seg::BinaryMask& mask);

// Angle (degrees, counterclockwise-positive with y down) that rotates the
// center-of-mass -> pith vector onto the "up" reference direction. Returns 0
// when the vector is shorter than one pixel.
double prealign_cm(const seg::BinaryMask& mask, const PithEstimate& pith);

struct PolarImage {
  cv::Mat1f values;  // bands x angular_positions, intensities in [0,1]
  cv::Mat1b valid;   // 1 where the sample fell on the CS
};

// Samples intensity along rays from the pith, radius normalized per ray to
// the mask boundary. Rows run inner to outer, columns counterclockwise from
// the pre-alignment reference: "up" rotated by reference_deg. Passing
// -prealign_cm(mask, pith) anchors column 0 on the CM->pith direction, which
// makes the unwrap rotation-invariant up to pith/CM estimation error.
// Throws InvalidInput if the pith lies outside the foreground.
PolarImage polar_unwrap(const seg::SquarePatch& patch, const PithEstimate& pith,
                        int bands, int angular_positions,
                        double reference_deg = 0.0);

struct LGConfig {
  int bands = 8;
  int angular_positions = 512;
  double wavelength = 64.0;  // log-Gabor center wavelength in angular samples
  double sigma_over_f = 0.5;
  int n_scales = 1;
  double scale_step = 2.0;  // wavelength ratio between consecutive scales

  std::uint64_t hash() const;
};

struct IrisTemplate {
  int bands = 0;
  int angular = 0;
  int bits_per_cell = 0;        // 2 per filter scale
  std::vector<std::uint8_t> code;   // bands*angular*bits_per_cell, values {0,1}
  std::vector<std::uint8_t> valid;  // bands*angular
  std::uint64_t config_hash = 0;

  std::uint8_t bit(int b, int a, int k) const {
    return code[(size_t(b) * angular + a) * bits_per_cell + k];
  }
  std::uint8_t is_valid(int b, int a) const { return valid[size_t(b) * angular + a]; }
};

// Circular 1-D log-Gabor filtering along the angular axis of each band;
// bits are the signs of the real and imaginary responses (ties encode 0).
// Spatial-domain circular convolution keeps shift equivariance bit-exact.
IrisTemplate log_gabor_encode(const PolarImage& polar, const LGConfig& config);

// Minimum fractional Hamming distance over circular shifts in
// [-max_shift, max_shift]; invalid cells are masked from the denominator.
double iris_compare(const IrisTemplate& t1, const IrisTemplate& t2, int max_shift = 21);

// Rotates template content: column i of the result is column (i+s) mod A of
// the input (negative s rotates the other way).
IrisTemplate shift_template(const IrisTemplate& t, int s);

struct GridConfig {
  int bands = 6;
  int cells_per_band = 60;
  int orientation_bins = 8;
  int frequency_bins = 4;
  int radial_samples_per_band = 8;
  int angular_samples_per_cell = 8;

  std::uint64_t hash() const;
};

struct CircularGridTemplate {
  int bands = 0;
  int cells = 0;
  int descriptor_size = 0;  // orientation_bins * frequency_bins
  std::vector<float> desc;          // bands*cells*descriptor_size, L1-normalized
  std::vector<std::uint8_t> valid;  // bands*cells
  std::uint64_t config_hash = 0;

  const float* cell(int b, int c) const {
    return &desc[(size_t(b) * cells + c) * descriptor_size];
  }
  std::uint8_t is_valid(int b, int c) const { return valid[size_t(b) * cells + c]; }
};

// Partitions the CS into bands x angular cells around the pith; each cell
// holds a joint histogram of ring orientation (relative to the radial
// direction) and radial ring frequency. Cells mostly outside the mask are
// flagged invalid.
CircularGridTemplate circular_grid_features(const seg::SquarePatch& patch,
                                            const seg::BinaryMask& mask,
                                            const PithEstimate& pith,
                                            const GridConfig& config);

inline CircularGridTemplate circular_grid_features(const seg::SquarePatch& patch,
                                                   const seg::BinaryMask& mask,
                                                   const PithEstimate& pith, int bands,
                                                   int cells_per_band) {
  GridConfig cfg;
  cfg.bands = bands;
  cfg.cells_per_band = cells_per_band;
  return circular_grid_features(patch, mask, pith, cfg);
}

// Minimum over one shared circular shift of the mean L1 cell distance over
// mutually valid cells. Throws IncomparableTemplates when geometry or config
// differs or no mutually valid cells exist at any shift.
double circular_grid_compare(const CircularGridTemplate& t1,
                             const CircularGridTemplate& t2);

CircularGridTemplate shift_template(const CircularGridTemplate& t, int s);

// Binary container with a JSON header carrying geometry and config hash.
void save_template(const IrisTemplate& t, const std::filesystem::path& path);
void save_template(const CircularGridTemplate& t, const std::filesystem::path& path);
IrisTemplate load_iris_template(const std::filesystem::path& path);
CircularGridTemplate load_grid_template(const std::filesystem::path& path);

}  // namespace logid::baselines
