#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "logid/evaluation.hpp"

using namespace logid;
using namespace logid::eval;

namespace {

// Independent EER reference: the same piecewise-linear FAR/FRR model solved
// by bisection on the knot parameter instead of algebraically.
double eer_oracle(std::vector<double> genuine, std::vector<double> impostor) {
  std::vector<double> knots;
  for (double v : genuine) knots.push_back(v);
  for (double v : impostor) knots.push_back(v);
  std::sort(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
  knots.insert(knots.begin(), knots.front() - 1.0);
  std::sort(genuine.begin(), genuine.end());
  std::sort(impostor.begin(), impostor.end());

  auto far_at = [&](double t) {
    return double(std::upper_bound(impostor.begin(), impostor.end(), t) -
                  impostor.begin()) /
           double(impostor.size());
  };
  auto frr_at = [&](double t) {
    return double(genuine.end() -
                  std::upper_bound(genuine.begin(), genuine.end(), t)) /
           double(genuine.size());
  };
  // piecewise-linear in the knot index parameter
  auto far_u = [&](double u) {
    const size_t k = std::min(size_t(u), knots.size() - 2);
    const double w = u - double(k);
    return (1 - w) * far_at(knots[k]) + w * far_at(knots[k + 1]);
  };
  auto frr_u = [&](double u) {
    const size_t k = std::min(size_t(u), knots.size() - 2);
    const double w = u - double(k);
    return (1 - w) * frr_at(knots[k]) + w * frr_at(knots[k + 1]);
  };
  double lo = 0, hi = double(knots.size() - 1);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (far_u(mid) - frr_u(mid) < 0)
      lo = mid;
    else
      hi = mid;
  }
  return far_u(0.5 * (lo + hi));
}

AcquisitionId acq(const std::string& log, EndSide end, int idx,
                  const std::string& tag = "D") {
  return {log, end, idx, tag};
}

}  // namespace

TEST_CASE("pair labels follow the same-log-different-end rule") {
  CHECK(label_pair(acq("log7", EndSide::top, 0), acq("log7", EndSide::top, 1)) ==
        PairLabel::genuine);
  CHECK(label_pair(acq("log7", EndSide::top, 0), acq("log7", EndSide::bottom, 2)) ==
        PairLabel::excluded);
  CHECK(label_pair(acq("log7", EndSide::top, 0), acq("log9", EndSide::bottom, 0)) ==
        PairLabel::impostor);
  CHECK_THROWS_AS(label_pair(acq("log7", EndSide::top, 0), acq("log7", EndSide::top, 0)),
                  InvalidInput);
}

TEST_CASE("fold sizes differ by at most one") {
  std::vector<std::string> logs;
  for (int i = 0; i < 279; ++i) logs.push_back("L" + std::to_string(i));
  FoldAssignment fa = make_folds(logs, 4, 11);
  std::map<int, int> sizes;
  for (const auto& [log, fold] : fa.fold_of) ++sizes[fold];
  std::multiset<int> observed;
  for (auto& [fold, n] : sizes) observed.insert(n);
  CHECK(observed == std::multiset<int>{69, 70, 70, 70});

  FoldAssignment fa8 = make_folds({"a", "b", "c", "d", "e", "f", "g", "h"}, 4, 1);
  std::map<int, int> sizes8;
  for (const auto& [log, fold] : fa8.fold_of) ++sizes8[fold];
  for (auto& [fold, n] : sizes8) CHECK(n == 2);
}

TEST_CASE("fold assignment is seed-deterministic") {
  std::vector<std::string> logs;
  for (int i = 0; i < 20; ++i) logs.push_back("L" + std::to_string(i));
  FoldAssignment a = make_folds(logs, 4, 5);
  FoldAssignment b = make_folds(logs, 4, 5);
  FoldAssignment c = make_folds(logs, 4, 6);
  CHECK(a.fold_of == b.fold_of);
  CHECK(a.fold_of != c.fold_of);
}

TEST_CASE("make_folds rejects bad input") {
  CHECK_THROWS_AS(make_folds({"a", "b"}, 4, 1), InvalidInput);
  CHECK_THROWS_AS(make_folds({"a", "a", "b", "c"}, 2, 1), InvalidInput);
}

TEST_CASE("score_fold enumerates each unordered pair once") {
  std::vector<AcquisitionId> items;
  for (int i = 0; i < 7; ++i) items.push_back(acq("L" + std::to_string(i), EndSide::top, 0));
  FoldScores s = score_fold(items, [](size_t i, size_t j) { return double(i + j); });
  CHECK(s.records.size() == 7 * 6 / 2);
}

TEST_CASE("fold of 2 logs x 2 ends x 2 acquisitions gives 4/8/16 label counts") {
  std::vector<AcquisitionId> items;
  for (const char* log : {"A", "B"})
    for (EndSide end : {EndSide::top, EndSide::bottom})
      for (int i = 0; i < 2; ++i) items.push_back(acq(log, end, i));

  // brute-force oracle over all unordered pairs
  long genuine = 0, excluded = 0, impostor = 0;
  for (size_t i = 0; i < items.size(); ++i)
    for (size_t j = i + 1; j < items.size(); ++j) {
      if (items[i].log_id == items[j].log_id && items[i].end == items[j].end)
        ++genuine;
      else if (items[i].log_id == items[j].log_id)
        ++excluded;
      else
        ++impostor;
    }
  CHECK(genuine == 4);
  CHECK(excluded == 8);
  CHECK(impostor == 16);

  FoldScores s = score_fold(items, [](size_t, size_t) { return 1.0; });
  long g = 0, e = 0, imp = 0;
  for (const auto& r : s.records) {
    g += r.label == PairLabel::genuine;
    e += r.label == PairLabel::excluded;
    imp += r.label == PairLabel::impostor;
  }
  CHECK(g == genuine);
  CHECK(e == excluded);
  CHECK(imp == impostor);
  CHECK(g + e + imp == long(s.records.size()));
}

TEST_CASE("comparator failures are recorded and dropped from EER input") {
  std::vector<AcquisitionId> items = {acq("A", EndSide::top, 0),
                                      acq("A", EndSide::top, 1),
                                      acq("B", EndSide::top, 0)};
  FoldScores s = score_fold(items, [](size_t i, size_t j) -> double {
    if (i == 0 && j == 1) throw std::runtime_error("broken pair");
    return 0.5;
  });
  CHECK(s.comparator_failures == 1);
  CHECK(s.records.size() == 3);
  CHECK(s.genuine_distances().empty());  // the only genuine pair failed
  CHECK(s.impostor_distances().size() == 2);
}

TEST_CASE("EER at the documented fixed points") {
  CHECK(compute_eer({0.1, 0.2}, {0.8, 0.9}) == 0.0);
  CHECK(compute_eer({0.1, 0.4}, {0.1, 0.4}) == 0.5);
  CHECK(compute_eer({0.5}, {0.5}) == 0.5);
  CHECK(compute_eer({0.1, 0.4, 0.6}, {0.3, 0.5, 0.9}) ==
        doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(compute_eer({0.1, 0.4, 0.6}, {0.3, 0.5, 0.9}) ==
        doctest::Approx(eer_oracle({0.1, 0.4, 0.6}, {0.3, 0.5, 0.9})).epsilon(1e-9));
  CHECK_THROWS_AS(compute_eer({}, {0.5}), InvalidInput);
  CHECK_THROWS_AS(compute_eer({0.5}, {}), InvalidInput);
}

TEST_CASE("EER matches the bisection oracle on random score lists") {
  Rng rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const int ng = rng.uniform_int(2, 100), ni = rng.uniform_int(2, 100);
    std::vector<double> genuine(ng), impostor(ni);
    const bool discrete = rng.uniform(0, 1) < 0.3;
    for (double& v : genuine)
      v = discrete ? double(rng.uniform_int(0, 9)) / 10 : rng.normal(0.4, 0.25);
    for (double& v : impostor)
      v = discrete ? double(rng.uniform_int(0, 9)) / 10 : rng.normal(0.9, 0.3);
    const double mine = compute_eer(genuine, impostor);
    const double ref = eer_oracle(genuine, impostor);
    REQUIRE(mine == doctest::Approx(ref).epsilon(0).scale(1).epsilon(1e-9));
    REQUIRE(mine >= 0.0);
    REQUIRE(mine <= 1.0);
  }
}

TEST_CASE("EER is invariant under strictly increasing transforms") {
  Rng rng(19);
  std::vector<double> genuine, impostor;
  for (int i = 0; i < 40; ++i) {
    genuine.push_back(rng.normal(0.5, 0.2));
    impostor.push_back(rng.normal(1.1, 0.3));
  }
  const double base = compute_eer(genuine, impostor);
  auto mapped = [&](auto f) {
    std::vector<double> g2, i2;
    for (double v : genuine) g2.push_back(f(v));
    for (double v : impostor) i2.push_back(f(v));
    return compute_eer(g2, i2);
  };
  CHECK(mapped([](double v) { return 3 * v + 7; }) == doctest::Approx(base).epsilon(1e-12));
  CHECK(mapped([](double v) { return std::exp(v); }) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("EER is symmetric under score mirroring") {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> genuine, impostor;
    for (int i = 0; i < 25; ++i) {
      genuine.push_back(rng.normal(0.5, 0.25));
      impostor.push_back(rng.normal(1.0, 0.25));
    }
    std::vector<double> g2, i2;
    for (double v : impostor) g2.push_back(-v);
    for (double v : genuine) i2.push_back(-v);
    REQUIRE(compute_eer(genuine, impostor) ==
            doctest::Approx(compute_eer(g2, i2)).epsilon(1e-9));
  }
}

TEST_CASE("cross_validate trains per fold and aggregates the mean") {
  // four logs per fold minimum: 8 logs x 2 ends x 2 acquisitions
  std::vector<LabeledPatch> data;
  for (int li = 0; li < 8; ++li)
    for (EndSide end : {EndSide::top, EndSide::bottom})
      for (int ai = 0; ai < 2; ++ai) {
        LabeledPatch lp;
        lp.id = acq("L" + std::to_string(li), end, ai, "SYNTH");
        data.push_back(std::move(lp));
      }
  FoldAssignment folds = make_folds(
      {"L0", "L1", "L2", "L3", "L4", "L5", "L6", "L7"}, 4, 3);

  int trainer_calls = 0;
  std::vector<size_t> train_sizes;
  Trainer trainer = [&](std::span<const LabeledPatch> train,
                        std::span<const LabeledPatch> eval_fold) -> Comparator {
    ++trainer_calls;
    train_sizes.push_back(train.size());
    std::vector<ClassLabel> labels;
    for (const auto& item : eval_fold) labels.push_back(item.id.label());
    // toy comparator: same class -> small distance, else large
    return [labels](size_t i, size_t j) {
      return labels[i] == labels[j] ? 0.1 : 0.9;
    };
  };

  EERReport report = cross_validate(data, folds, trainer, nullptr, "SqNet");
  CHECK(trainer_calls == 4);
  CHECK(report.fold_eer.size() == 4);
  CHECK(report.regime_tag == "SqNet");
  CHECK(report.dataset_tag == "SYNTH");
  for (double e : report.fold_eer) CHECK(e == 0.0);  // toy comparator separates
  CHECK(report.mean_eer == 0.0);
  for (size_t s : train_sizes) CHECK(s == 24);  // 6 logs x 2 ends x 2 acq

  // each fold: 2 logs x 2 ends x 2 acq = 8 items -> 28 pairs (4/8/16)
  for (const auto& c : report.fold_counts) {
    CHECK(c.genuine == 4);
    CHECK(c.excluded == 8);
    CHECK(c.impostor == 16);
  }

  // SqNet+ regime: extra data joins every training fold
  std::vector<LabeledPatch> extra(10);
  for (int i = 0; i < 10; ++i) extra[i].id = acq("X" + std::to_string(i), EndSide::top, 0, "EXTRA");
  train_sizes.clear();
  EERReport plus = cross_validate(data, folds, trainer, &extra, "SqNet+");
  CHECK(plus.regime_tag == "SqNet+");
  for (size_t s : train_sizes) CHECK(s == 34);
}

TEST_CASE("degenerate folds raise protocol errors naming the fold") {
  // 4 logs, one acquisition each: a fold has one item and no genuine pairs
  std::vector<LabeledPatch> data;
  for (int li = 0; li < 4; ++li) {
    LabeledPatch lp;
    lp.id = acq("L" + std::to_string(li), EndSide::top, 0);
    data.push_back(std::move(lp));
  }
  FoldAssignment folds = make_folds({"L0", "L1", "L2", "L3"}, 4, 3);
  Trainer trainer = [](std::span<const LabeledPatch>,
                       std::span<const LabeledPatch>) -> Comparator {
    return [](size_t, size_t) { return 1.0; };
  };
  CHECK_THROWS_AS(cross_validate(data, folds, trainer, nullptr, "SqNet"),
                  ProtocolError);
  try {
    cross_validate(data, folds, trainer, nullptr, "SqNet");
  } catch (const ProtocolError& e) {
    CHECK(std::string(e.what()).find("fold") != std::string::npos);
  }
}

TEST_CASE("deleting excluded records does not change fold EER inputs") {
  std::vector<AcquisitionId> items;
  for (const char* log : {"A", "B", "C"})
    for (EndSide end : {EndSide::top, EndSide::bottom})
      for (int i = 0; i < 2; ++i) items.push_back(acq(log, end, i));
  Rng rng(31);
  std::map<std::pair<size_t, size_t>, double> dist;
  for (size_t i = 0; i < items.size(); ++i)
    for (size_t j = i + 1; j < items.size(); ++j)
      dist[{i, j}] = rng.uniform(0.0, 2.0);
  FoldScores s = score_fold(items, [&](size_t i, size_t j) { return dist.at({i, j}); });

  const double eer_all = compute_eer(s.genuine_distances(), s.impostor_distances());

  // rebuild with excluded records removed entirely
  FoldScores pruned;
  for (const auto& r : s.records)
    if (r.label != PairLabel::excluded) pruned.records.push_back(r);
  const double eer_pruned =
      compute_eer(pruned.genuine_distances(), pruned.impostor_distances());
  CHECK(eer_all == eer_pruned);
}

TEST_CASE("reports roundtrip through JSON and render as a table") {
  EERReport r;
  r.regime_tag = "SqNet";
  r.dataset_tag = "SYN";
  r.fold_seed = 9;
  r.fold_eer = {0.01, 0.02, 0.03, 0.04};
  r.fold_counts = {{10, 20, 5}, {10, 20, 5}, {10, 20, 5}, {10, 20, 5}};
  r.mean_eer = 0.025;

  const auto path = std::filesystem::temp_directory_path() / "logid_report.json";
  r.save_json(path);
  EERReport loaded = EERReport::load_json(path);
  CHECK(loaded.mean_eer == doctest::Approx(0.025));
  CHECK(loaded.fold_eer.size() == 4);
  CHECK(loaded.fold_counts[2].impostor == 20);

  EERReport iris = r;
  iris.regime_tag = "iris";
  iris.mean_eer = 0.21;
  const std::string table = render_report_table({loaded, iris});
  CHECK(table.find("SqNet") != std::string::npos);
  CHECK(table.find("iris") != std::string::npos);
  CHECK(table.find("SYN") != std::string::npos);
  CHECK(table.find("2.50") != std::string::npos);   // mean EER in percent
  CHECK(table.find("21.00") != std::string::npos);
  std::filesystem::remove(path);
}

TEST_CASE("mean of the documented fold EERs") {
  EERReport r;
  r.fold_eer = {0.01, 0.02, 0.03, 0.04};
  double mean = 0;
  for (double e : r.fold_eer) mean += e;
  CHECK(mean / 4 == doctest::Approx(0.025).epsilon(1e-15));
}
