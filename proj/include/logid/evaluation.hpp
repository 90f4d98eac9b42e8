#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "logid/common.hpp"
#include "logid/dataset.hpp"
#include "logid/segmentation.hpp"

namespace logid::eval {

enum class PairLabel { genuine, impostor, excluded };

std::string to_string(PairLabel label);

// Genuine iff same (log_id, end); excluded iff same log but different ends;
// impostor otherwise. Self-comparison is an error.
PairLabel label_pair(const AcquisitionId& a, const AcquisitionId& b);

struct ScoreRecord {
  std::string probe_id;
  std::string gallery_id;
  double distance = 0.0;
  PairLabel label = PairLabel::impostor;
  bool valid = true;  // false when the comparator failed on this pair
};

// log_id -> fold index in {0..k-1}; fold sizes differ by at most one and all
// acquisitions of a log share its fold.
struct FoldAssignment {
  int k = 4;
  std::uint64_t seed = 0;
  std::map<std::string, int> fold_of;

  int fold(const std::string& log_id) const;
};

FoldAssignment make_folds(const std::vector<std::string>& log_ids, int k,
                          std::uint64_t seed);

// Distance between two items of one fold, by index.
using Comparator = std::function<double(size_t, size_t)>;

struct FoldScores {
  std::vector<ScoreRecord> records;
  int comparator_failures = 0;

  std::vector<double> genuine_distances() const;
  std::vector<double> impostor_distances() const;
};

// Scores every unordered pair within the fold exactly once. Comparator
// exceptions mark the record invalid and drop the pair from EER input.
FoldScores score_fold(const std::vector<AcquisitionId>& items, const Comparator& cmp);

// Operating point where the false accept rate equals the false reject rate.
// Thresholds sweep all observed scores with linear interpolation of the
// crossing. Both lists must be nonempty.
double compute_eer(std::vector<double> genuine, std::vector<double> impostor);

struct FoldCounts {
  long genuine = 0;
  long impostor = 0;
  long excluded = 0;
};

struct EERReport {
  std::string regime_tag;      // "SqNet", "SqNet+" or a baseline name
  std::string dataset_tag;
  std::uint64_t fold_seed = 0;
  std::vector<double> fold_eer;
  std::vector<FoldCounts> fold_counts;
  double mean_eer = 0.0;

  void save_json(const std::filesystem::path& path) const;
  static EERReport load_json(const std::filesystem::path& path);
};

// One labeled patch of the evaluation corpus.
struct LabeledPatch {
  AcquisitionId id;
  seg::SquarePatch patch;
};

// Builds a comparator for the held-out fold from the training items.
// Baselines ignore the training set; the embedder trains a fresh model.
using Trainer = std::function<Comparator(std::span<const LabeledPatch> train,
                                         std::span<const LabeledPatch> eval_fold)>;

// k-fold verification: per fold trains on the remaining folds (plus
// extra_train when given: the SqNet+ regime), scores all within-fold pairs
// and computes the fold EER. Items from different folds are never compared.
// fold_scores_out, when given, receives the raw per-fold score records.
EERReport cross_validate(const std::vector<LabeledPatch>& dataset,
                         const FoldAssignment& folds, const Trainer& trainer,
                         const std::vector<LabeledPatch>* extra_train,
                         const std::string& regime_tag,
                         std::vector<FoldScores>* fold_scores_out = nullptr);

void save_scores_csv(const std::vector<ScoreRecord>& records,
                     const std::filesystem::path& path);

// Table shaped like a methods-by-datasets results matrix; cells are mean
// EERs in percent.
std::string render_report_table(const std::vector<EERReport>& reports);

}  // namespace logid::eval
