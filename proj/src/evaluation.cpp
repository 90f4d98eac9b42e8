#include "logid/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace logid::eval {

std::string to_string(PairLabel label) {
  switch (label) {
    case PairLabel::genuine: return "genuine";
    case PairLabel::impostor: return "impostor";
    case PairLabel::excluded: return "excluded";
  }
  return "impostor";
}

PairLabel label_pair(const AcquisitionId& a, const AcquisitionId& b) {
  if (a == b) throw InvalidInput("label_pair: self-comparison is never scored");
  if (a.log_id == b.log_id && a.end == b.end) return PairLabel::genuine;
  if (a.log_id == b.log_id) return PairLabel::excluded;
  return PairLabel::impostor;
}

int FoldAssignment::fold(const std::string& log_id) const {
  auto it = fold_of.find(log_id);
  if (it == fold_of.end())
    throw InvalidInput("FoldAssignment: unknown log id " + log_id);
  return it->second;
}

FoldAssignment make_folds(const std::vector<std::string>& log_ids, int k,
                          std::uint64_t seed) {
  if (k < 1) throw InvalidInput("make_folds: k must be >= 1");
  if (int(log_ids.size()) < k)
    throw InvalidInput("make_folds: fewer logs than folds");
  std::set<std::string> unique(log_ids.begin(), log_ids.end());
  if (unique.size() != log_ids.size())
    throw InvalidInput("make_folds: duplicate log ids");

  std::vector<std::string> shuffled = log_ids;
  Rng rng(seed_combine(seed, 0xF01D));
  std::shuffle(shuffled.begin(), shuffled.end(), rng.engine());

  FoldAssignment fa;
  fa.k = k;
  fa.seed = seed;
  for (size_t i = 0; i < shuffled.size(); ++i)
    fa.fold_of[shuffled[i]] = int(i % size_t(k));
  return fa;
}

std::vector<double> FoldScores::genuine_distances() const {
  std::vector<double> out;
  for (const auto& r : records)
    if (r.valid && r.label == PairLabel::genuine) out.push_back(r.distance);
  return out;
}

std::vector<double> FoldScores::impostor_distances() const {
  std::vector<double> out;
  for (const auto& r : records)
    if (r.valid && r.label == PairLabel::impostor) out.push_back(r.distance);
  return out;
}

FoldScores score_fold(const std::vector<AcquisitionId>& items, const Comparator& cmp) {
  if (items.empty()) throw InvalidInput("score_fold: empty fold");
  FoldScores out;
  for (size_t i = 0; i < items.size(); ++i) {
    for (size_t j = i + 1; j < items.size(); ++j) {
      ScoreRecord rec;
      rec.probe_id = items[i].key();
      rec.gallery_id = items[j].key();
      rec.label = label_pair(items[i], items[j]);
      try {
        rec.distance = cmp(i, j);
      } catch (const std::exception&) {
        rec.valid = false;
        ++out.comparator_failures;
      }
      out.records.push_back(std::move(rec));
    }
  }
  return out;
}

double compute_eer(std::vector<double> genuine, std::vector<double> impostor) {
  if (genuine.empty() || impostor.empty())
    throw InvalidInput("compute_eer: needs nonempty genuine and impostor lists");
  std::sort(genuine.begin(), genuine.end());
  std::sort(impostor.begin(), impostor.end());

  std::vector<double> thresholds;
  thresholds.reserve(genuine.size() + impostor.size() + 1);
  for (double v : genuine) thresholds.push_back(v);
  for (double v : impostor) thresholds.push_back(v);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  // virtual threshold below every score: FAR=0, FRR=1
  thresholds.insert(thresholds.begin(), thresholds.front() - 1.0);

  const double ng = double(genuine.size()), ni = double(impostor.size());
  auto far_at = [&](double t) {
    return double(std::upper_bound(impostor.begin(), impostor.end(), t) -
                  impostor.begin()) /
           ni;
  };
  auto frr_at = [&](double t) {
    return double(genuine.end() - std::upper_bound(genuine.begin(), genuine.end(), t)) /
           ng;
  };

  double prev_far = 0, prev_frr = 1, prev_d = -1;
  for (const double t : thresholds) {
    const double far = far_at(t), frr = frr_at(t);
    const double d = far - frr;
    if (d == 0.0) return far;  // FAR == FRR exactly at an observed threshold
    if (d > 0.0) {
      // crossing strictly inside (prev, current): interpolate linearly
      const double w = -prev_d / (d - prev_d);
      return prev_far + w * (far - prev_far);
    }
    prev_far = far;
    prev_frr = frr;
    prev_d = d;
  }
  // d is nondecreasing and reaches +1 at the maximum score
  (void)prev_frr;
  return 1.0;
}

void EERReport::save_json(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["regime"] = regime_tag;
  j["dataset_tag"] = dataset_tag;
  j["fold_seed"] = fold_seed;
  j["fold_eer"] = fold_eer;
  j["mean_eer"] = mean_eer;
  j["fold_counts"] = nlohmann::json::array();
  for (const auto& c : fold_counts)
    j["fold_counts"].push_back(
        {{"genuine", c.genuine}, {"impostor", c.impostor}, {"excluded", c.excluded}});
  std::ofstream os(path);
  if (!os) throw IoError("cannot write report: " + path.string());
  os << j.dump(2) << "\n";
}

EERReport EERReport::load_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read report: " + path.string());
  nlohmann::json j;
  is >> j;
  EERReport r;
  r.regime_tag = j.at("regime").get<std::string>();
  r.dataset_tag = j.at("dataset_tag").get<std::string>();
  r.fold_seed = j.at("fold_seed").get<std::uint64_t>();
  r.fold_eer = j.at("fold_eer").get<std::vector<double>>();
  r.mean_eer = j.at("mean_eer").get<double>();
  for (const auto& c : j.at("fold_counts"))
    r.fold_counts.push_back({c.at("genuine").get<long>(), c.at("impostor").get<long>(),
                             c.at("excluded").get<long>()});
  return r;
}

EERReport cross_validate(const std::vector<LabeledPatch>& dataset,
                         const FoldAssignment& folds, const Trainer& trainer,
                         const std::vector<LabeledPatch>* extra_train,
                         const std::string& regime_tag,
                         std::vector<FoldScores>* fold_scores_out) {
  if (dataset.empty()) throw InvalidInput("cross_validate: empty dataset");
  if (fold_scores_out) fold_scores_out->clear();

  EERReport report;
  report.regime_tag = regime_tag;
  report.dataset_tag = dataset.front().id.dataset_tag;
  report.fold_seed = folds.seed;

  for (int f = 0; f < folds.k; ++f) {
    std::vector<LabeledPatch> train;
    std::vector<LabeledPatch> eval_fold;
    for (const auto& item : dataset) {
      if (folds.fold(item.id.log_id) == f)
        eval_fold.push_back(item);
      else
        train.push_back(item);
    }
    if (eval_fold.empty())
      throw ProtocolError("cross_validate: fold " + std::to_string(f) + " is empty");
    if (extra_train)
      train.insert(train.end(), extra_train->begin(), extra_train->end());

    const Comparator cmp = trainer(std::span<const LabeledPatch>(train),
                                   std::span<const LabeledPatch>(eval_fold));

    std::vector<AcquisitionId> ids;
    ids.reserve(eval_fold.size());
    for (const auto& item : eval_fold) ids.push_back(item.id);
    const FoldScores scores = score_fold(ids, cmp);
    if (fold_scores_out) fold_scores_out->push_back(scores);

    FoldCounts counts;
    for (const auto& r : scores.records) {
      if (r.label == PairLabel::genuine) ++counts.genuine;
      if (r.label == PairLabel::impostor) ++counts.impostor;
      if (r.label == PairLabel::excluded) ++counts.excluded;
    }
    const auto genuine = scores.genuine_distances();
    const auto impostor = scores.impostor_distances();
    if (genuine.empty() || impostor.empty())
      throw ProtocolError("cross_validate: fold " + std::to_string(f) +
                          " lacks genuine or impostor pairs");
    report.fold_eer.push_back(compute_eer(genuine, impostor));
    report.fold_counts.push_back(counts);
  }
  report.mean_eer =
      std::accumulate(report.fold_eer.begin(), report.fold_eer.end(), 0.0) /
      double(report.fold_eer.size());
  return report;
}

void save_scores_csv(const std::vector<ScoreRecord>& records,
                     const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write scores: " + path.string());
  os << "probe_id,gallery_id,distance,label\n";
  os.precision(9);
  for (const auto& r : records) {
    os << r.probe_id << "," << r.gallery_id << ",";
    if (r.valid)
      os << r.distance;
    else
      os << "error";
    os << "," << to_string(r.label) << "\n";
  }
}

std::string render_report_table(const std::vector<EERReport>& reports) {
  std::vector<std::string> methods, datasets;
  for (const auto& r : reports) {
    if (std::find(methods.begin(), methods.end(), r.regime_tag) == methods.end())
      methods.push_back(r.regime_tag);
    if (std::find(datasets.begin(), datasets.end(), r.dataset_tag) == datasets.end())
      datasets.push_back(r.dataset_tag);
  }
  std::ostringstream os;
  os << "Mean EER [%] over folds\n";
  os << "method";
  for (const auto& d : datasets) os << "\t" << d;
  os << "\n";
  for (const auto& m : methods) {
    os << m;
    for (const auto& d : datasets) {
      const EERReport* found = nullptr;
      for (const auto& r : reports)
        if (r.regime_tag == m && r.dataset_tag == d) found = &r;
      if (found) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", 100.0 * found->mean_eer);
        os << "\t" << buf;
      } else {
        os << "\t-";
      }
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace logid::eval
