#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "logid/common.hpp"
#include "logid/dataset.hpp"
#include "logid/nn.hpp"
#include "logid/segmentation.hpp"

namespace logid::embedding {

using EmbeddingVector = std::vector<float>;

// Indices into the batch that produced them.
struct Triplet {
  int anchor = 0;
  int positive = 0;
  int negative = 0;

  bool operator==(const Triplet&) const = default;
};

struct TrainSchedule {
  int epochs = 400;
  double base_lr = 1e-3;
  double decay_factor = 10.0;
  int decay_period_epochs = 120;
  int batch_classes = 8;   // C distinct classes per batch
  int batch_samples = 4;   // K samples per class
  double margin = 0.2;

  double lr_at(int epoch) const;
  void validate() const;
};

// max(0, |a-p|^2 - |a-n|^2 + margin). Dimension mismatch -> InvalidInput.
double triplet_loss(const EmbeddingVector& a, const EmbeddingVector& p,
                    const EmbeddingVector& n, double margin);

// Analytic gradients of triplet_loss w.r.t. each input; zero when the
// hinge is inactive.
struct TripletGrads {
  EmbeddingVector d_anchor, d_positive, d_negative;
};
TripletGrads triplet_loss_grad(const EmbeddingVector& a, const EmbeddingVector& p,
                               const EmbeddingVector& n, double margin);

// All in-batch triplets with strictly positive loss, skipping any whose
// anchor and negative come from the same log but different ends. Returns an
// empty list when no valid anchor/positive pair exists.
std::vector<Triplet> mine_hard_triplets(const std::vector<EmbeddingVector>& embeddings,
                                        const std::vector<ClassLabel>& labels,
                                        double margin);

inline constexpr int kAugmentResize = 234;
inline constexpr int kAugmentCrop = 224;

// Deterministic core: rotate about the patch center (counterclockwise
// degrees, black fill), resize to 234x234, crop 224x224 with the given
// top-left offset in [0,10]^2.
cv::Mat3b augment_with(const seg::SquarePatch& patch, double angle_deg, int off_x,
                       int off_y);

// Random nuisance application, a pure function of (patch, seed): angle
// uniform in [0,360), crop offset uniform over all valid 224-crops.
cv::Mat3b augment(const seg::SquarePatch& patch, std::uint64_t seed);

struct EmbedderConfig {
  int input_side = 224;
  int dim = 256;
  bool normalize = true;  // L2-normalize embeddings (margin becomes scale-free)
  std::uint64_t seed = 0;
};

class EmbedderModel {
 public:
  // input_side must be >= 32 and divisible by 16; dim >= 2.
  static EmbedderModel build(const EmbedderConfig& cfg);

  EmbedderModel clone() const;

  const EmbedderConfig& config() const { return cfg_; }
  nn::Net& net() { return *net_; }
  const nn::Net& net() const { return *net_; }

  void save(const std::filesystem::path& blob_path) const;  // + .json sidecar
  static EmbedderModel load(const std::filesystem::path& blob_path);

  std::string training_config;  // JSON snapshot, persisted in the sidecar

 private:
  EmbedderModel() = default;
  EmbedderConfig cfg_;
  std::shared_ptr<nn::Net> net_;
};

inline EmbedderModel build_embedder(int input_side, int dim, std::uint64_t seed) {
  return EmbedderModel::build({input_side, dim, true, seed});
}

// Deterministic inference: resize the patch to the model input size and run
// the net; no augmentation.
EmbeddingVector embed(const EmbedderModel& model, const seg::SquarePatch& patch);

// Balanced-batch training with online hard triplet mining and SGD with
// momentum 0.9 under the stepwise-decay schedule. Returns the trained copy;
// the input model is untouched. epochs == 0 returns an identical copy.
// lr_trace, when given, receives the learning rate used at every epoch.
EmbedderModel train_embedder(const EmbedderModel& model,
                             const std::vector<std::pair<seg::SquarePatch, ClassLabel>>& train_set,
                             const TrainSchedule& schedule, std::uint64_t seed,
                             std::vector<double>* lr_trace = nullptr);

struct EmbeddingRecord {
  AcquisitionId id;
  EmbeddingVector values;
};

void save_embeddings_csv(const std::vector<EmbeddingRecord>& records,
                         const std::filesystem::path& path);
// Binary blob: "LEMB", JSON header (ids, dim), float32 payload.
void save_embeddings_blob(const std::vector<EmbeddingRecord>& records,
                          const std::filesystem::path& path);
std::vector<EmbeddingRecord> load_embeddings_blob(const std::filesystem::path& path);

double euclidean_distance(const EmbeddingVector& a, const EmbeddingVector& b);

}  // namespace logid::embedding
