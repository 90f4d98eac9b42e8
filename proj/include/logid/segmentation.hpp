#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "logid/common.hpp"
#include "logid/nn.hpp"

namespace logid::seg {

// Per-pixel CS probability, same size as the source image, values in [0,1].
using ProbabilityMask = cv::Mat1f;
// 0/1 per pixel.
using BinaryMask = cv::Mat1b;

// Square crop of the segmented cross-section: background black, the CS
// bounding box centered, plus a black border frame on every side.
struct SquarePatch {
  cv::Mat3b pixels;
  cv::Mat1b mask;       // CS mask transplanted into the patch frame
  std::string source;   // acquisition key of the source image
  cv::Point origin;     // top-left of the patch in source coordinates
  int border = 0;

  int side() const { return pixels.rows; }
};

// output[i,j] = 0 if mask[i,j] < t else 1. Requires t in (0,1).
BinaryMask binarize(const ProbabilityMask& mask, double t);

// Fraction of agreeing pixels; shapes must match.
double pixel_accuracy(const BinaryMask& pred, const BinaryMask& truth);

// Zero out all but the largest connected foreground component.
BinaryMask keep_largest_component(const BinaryMask& mask);

// Crops the minimal square containing every mask==1 pixel, centered on the
// bounding box, background blacked out, plus `border` black pixels on each
// side. Regions beyond the source image pad with black.
// Throws SegmentationFailed on an empty mask.
SquarePatch extract_patch(const cv::Mat3b& image, const BinaryMask& mask,
                          int border = 5, const std::string& source = {});

void save_patch(const SquarePatch& patch, const std::filesystem::path& png_path);

struct SegTrainConfig {
  int epochs = 30;
  int internal_size = 128;  // images are processed at this resolution
  int batch_size = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

// Small encoder-decoder per-pixel classifier. Works at a fixed internal
// resolution; probability masks are resized back to the source size.
class SegmenterModel {
 public:
  static SegmenterModel create(int internal_size, std::uint64_t seed);

  // Pure function of (model, image); output matches the image size.
  ProbabilityMask predict(const cv::Mat3b& image) const;

  int internal_size() const { return internal_size_; }
  const std::string& version() const { return version_; }

  void save(const std::filesystem::path& blob_path) const;  // + .json sidecar
  static SegmenterModel load(const std::filesystem::path& blob_path);

 private:
  friend SegmenterModel train_segmenter(
      const std::vector<std::pair<cv::Mat3b, BinaryMask>>&, const SegTrainConfig&);
  SegmenterModel() = default;

  int internal_size_ = 128;
  std::string version_ = "segmenter-v1";
  std::string training_config_;  // JSON snapshot, persisted in the sidecar
  std::shared_ptr<nn::Net> net_;
};

// Trains on (image, ground-truth mask) pairs for cfg.epochs epochs.
// epochs == 0 returns the freshly initialized model. Seed-deterministic for
// a fixed thread count.
SegmenterModel train_segmenter(
    const std::vector<std::pair<cv::Mat3b, BinaryMask>>& train_set,
    const SegTrainConfig& cfg);

}  // namespace logid::seg
