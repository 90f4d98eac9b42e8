// Command-line front door for the wood-log identification pipeline:
// dataset synthesis, CS segmentation and patch extraction, embedding
// training, baseline template extraction and verification evaluation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include "logid/baselines.hpp"
#include "logid/common.hpp"
#include "logid/dataset.hpp"
#include "logid/embedding.hpp"
#include "logid/evaluation.hpp"
#include "logid/segmentation.hpp"
#include "logid/synthgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace logid;

namespace {

constexpr const char* kVersion = "0.1.0";

// distinct exit codes per error class
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitProtocol = 4;

struct SynthOptions {
  std::string out;
  std::string profile = "default";
  std::string tag = "SYN";
  int logs = 8;
  int acqs = 4;
  int size = 512;
  std::uint64_t seed = 1;
};

struct SegmentOptions {
  std::string data;
  std::string train_data;  // defaults to data
  std::string model;       // load if present, otherwise train and save here
  std::string out;
  int epochs = 30;
  int internal_size = 128;
  int border = 5;
  double threshold = -1.0;  // <0: use the per-tag map
  std::map<std::string, double> threshold_map{
      {"MVA", 0.5}, {"SM", 0.5}, {"FH", 0.25}, {"FL", 0.25}};
  double default_threshold = 0.5;
  std::uint64_t seed = 2;
  bool use_truth = false;
  bool cross_validate = false;
  int folds = 4;
  std::uint64_t fold_seed = 4;
};

struct EmbedOptions {
  int input_side = 224;
  int dim = 256;
  bool normalize = true;
  int epochs = 400;
  double base_lr = 1e-3;
  double decay_factor = 10.0;
  int decay_period = 120;
  int batch_classes = 8;
  int batch_samples = 4;
  double margin = 0.2;
  std::uint64_t seed = 3;
};

struct BaselineOptions {
  int bands = 8;
  int angular = 512;
  double wavelength = 64.0;
  double sigma_over_f = 0.5;
  int max_shift = 21;
  int grid_bands = 6;
  int grid_cells = 60;
};

struct EvaluateOptions {
  std::string patches;
  std::string method;  // embedder | iris | circular-grid
  std::string regime = "sqnet";
  std::string extra;  // patches manifest joined to every training fold
  std::string out;
  int folds = 4;
  std::uint64_t fold_seed = 4;
};

double threshold_for_tag(const SegmentOptions& opt, const std::string& tag) {
  if (opt.threshold > 0) return opt.threshold;
  auto it = opt.threshold_map.find(tag);
  return it != opt.threshold_map.end() ? it->second : opt.default_threshold;
}

void write_run_snapshot(const fs::path& out_dir, const std::string& command,
                        const json& resolved) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  json j{{"command", command}, {"version", kVersion}, {"config", resolved}};
  std::ofstream os(out_dir / "run_config.json");
  if (!os) throw IoError("cannot write run snapshot in " + out_dir.string());
  os << j.dump(2) << "\n";
}

cv::Mat3b read_image(const fs::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw IoError("cannot read image: " + path.string());
  return img;
}

seg::BinaryMask read_mask(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw IoError("cannot read mask: " + path.string());
  seg::BinaryMask out(m.size());
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) out(y, x) = m.at<std::uint8_t>(y, x) > 127 ? 1 : 0;
  return out;
}

// ---- patches manifest -----------------------------------------------------

struct PatchEntry {
  AcquisitionId id;
  std::string patch_path;      // relative to the patches manifest
  std::string patch_mask_path;
  std::string full_mask_path;
  bool ok = true;
  std::string reason;
};

struct PatchesManifest {
  std::string dataset_tag;
  int border = 5;
  fs::path root;
  std::vector<PatchEntry> entries;
  int failure_count = 0;
};

void save_patches_manifest(const PatchesManifest& m, const fs::path& file) {
  json j;
  j["dataset_tag"] = m.dataset_tag;
  j["border"] = m.border;
  j["failure_count"] = m.failure_count;
  j["entries"] = json::array();
  for (const auto& e : m.entries) {
    json je{{"log_id", e.id.log_id},
            {"end", to_string(e.id.end)},
            {"acq_index", e.id.acq_index},
            {"dataset_tag", e.id.dataset_tag},
            {"ok", e.ok}};
    if (e.ok) {
      je["patch"] = e.patch_path;
      je["patch_mask"] = e.patch_mask_path;
      je["full_mask"] = e.full_mask_path;
    } else {
      je["reason"] = e.reason;
    }
    j["entries"].push_back(std::move(je));
  }
  std::ofstream os(file);
  if (!os) throw IoError("cannot write patches manifest: " + file.string());
  os << j.dump(2) << "\n";
}

PatchesManifest load_patches_manifest(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot read patches manifest: " + file.string());
  json j;
  is >> j;
  PatchesManifest m;
  m.dataset_tag = j.at("dataset_tag").get<std::string>();
  m.border = j.at("border").get<int>();
  m.failure_count = j.at("failure_count").get<int>();
  m.root = file.parent_path();
  for (const auto& je : j.at("entries")) {
    PatchEntry e;
    e.id.log_id = je.at("log_id").get<std::string>();
    e.id.end = end_side_from_string(je.at("end").get<std::string>());
    e.id.acq_index = je.at("acq_index").get<int>();
    e.id.dataset_tag = je.at("dataset_tag").get<std::string>();
    e.ok = je.at("ok").get<bool>();
    if (e.ok) {
      e.patch_path = je.at("patch").get<std::string>();
      e.patch_mask_path = je.at("patch_mask").get<std::string>();
      e.full_mask_path = je.value("full_mask", "");
    } else {
      e.reason = je.value("reason", "");
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

std::vector<eval::LabeledPatch> load_labeled_patches(const PatchesManifest& m) {
  std::vector<eval::LabeledPatch> out;
  for (const auto& e : m.entries) {
    if (!e.ok) continue;
    eval::LabeledPatch lp;
    lp.id = e.id;
    lp.patch.pixels = read_image(m.root / e.patch_path);
    lp.patch.mask = read_mask(m.root / e.patch_mask_path);
    lp.patch.border = m.border;
    lp.patch.source = e.id.key();
    out.push_back(std::move(lp));
  }
  if (out.empty()) throw IoError("patches manifest holds no usable entries");
  return out;
}

// ---- subcommands ------------------------------------------------------------

int run_synth(const SynthOptions& opt) {
  synthgen::GeneratorConfig cfg;
  cfg.n_logs = opt.logs;
  cfg.acquisitions_per_end = opt.acqs;
  cfg.dataset_tag = opt.tag;
  cfg.seed = opt.seed;
  cfg.image_size = opt.size;

  const fs::path out(opt.out);
  write_run_snapshot(out, "synth",
                     json{{"profile", opt.profile},
                          {"tag", cfg.dataset_tag},
                          {"logs", cfg.n_logs},
                          {"acqs", cfg.acquisitions_per_end},
                          {"size", cfg.image_size},
                          {"seed", cfg.seed}});
  DatasetManifest m = synthgen::generate_dataset(cfg, out);
  std::cout << (m.root / "manifest.json").string() << "\n";
  return kExitOk;
}

seg::SegmenterModel obtain_segmenter(const SegmentOptions& opt,
                                     const DatasetManifest& train_manifest,
                                     const std::vector<int>& train_rows) {
  if (!opt.model.empty() && fs::exists(opt.model)) {
    std::cerr << "loading segmenter from " << opt.model << "\n";
    return seg::SegmenterModel::load(opt.model);
  }
  std::vector<std::pair<cv::Mat3b, seg::BinaryMask>> train_set;
  for (int row : train_rows) {
    const auto& e = train_manifest.entries[row];
    train_set.emplace_back(read_image(train_manifest.root / e.image_path),
                           read_mask(train_manifest.root / e.mask_path));
  }
  seg::SegTrainConfig cfg;
  cfg.epochs = opt.epochs;
  cfg.internal_size = opt.internal_size;
  cfg.seed = opt.seed;
  std::cerr << "training segmenter on " << train_set.size() << " images for "
            << cfg.epochs << " epochs\n";
  seg::SegmenterModel model = seg::train_segmenter(train_set, cfg);
  if (!opt.model.empty()) model.save(opt.model);
  return model;
}

int run_segment(const SegmentOptions& opt) {
  const DatasetManifest data = load_manifest(opt.data);
  const fs::path out(opt.out);
  write_run_snapshot(out, "segment",
                     json{{"data", opt.data},
                          {"train_data", opt.train_data},
                          {"epochs", opt.epochs},
                          {"internal_size", opt.internal_size},
                          {"border", opt.border},
                          {"threshold", opt.threshold},
                          {"use_truth", opt.use_truth},
                          {"cross_validate", opt.cross_validate},
                          {"folds", opt.folds},
                          {"fold_seed", opt.fold_seed},
                          {"seed", opt.seed}});

  // which model predicts each row: -1 = shared model, else fold index
  std::vector<int> fold_of_row(data.entries.size(), -1);
  std::vector<seg::SegmenterModel> models;
  if (opt.use_truth) {
    // ground-truth masks only; no model involved
  } else if (opt.cross_validate) {
    eval::FoldAssignment fa = eval::make_folds(data.log_ids(), opt.folds, opt.fold_seed);
    for (size_t i = 0; i < data.entries.size(); ++i)
      fold_of_row[i] = fa.fold(data.entries[i].id.log_id);
    for (int f = 0; f < opt.folds; ++f) {
      std::vector<int> rows;
      for (size_t i = 0; i < data.entries.size(); ++i)
        if (fold_of_row[i] != f) rows.push_back(int(i));
      SegmentOptions fold_opt = opt;
      fold_opt.model.clear();  // per-fold models are transient
      models.push_back(obtain_segmenter(fold_opt, data, rows));
    }
  } else {
    const DatasetManifest train =
        opt.train_data.empty() || opt.train_data == opt.data ? data
                                                             : load_manifest(opt.train_data);
    std::vector<int> rows(train.entries.size());
    for (size_t i = 0; i < rows.size(); ++i) rows[i] = int(i);
    models.push_back(obtain_segmenter(opt, train, rows));
    fold_of_row.assign(data.entries.size(), 0);
  }

  PatchesManifest pm;
  pm.dataset_tag = data.dataset_tag;
  pm.border = opt.border;
  pm.root = out;
  const double t = threshold_for_tag(opt, data.dataset_tag);
  std::cerr << "binarization threshold for tag " << data.dataset_tag << ": " << t
            << "\n";

  for (size_t i = 0; i < data.entries.size(); ++i) {
    const auto& e = data.entries[i];
    PatchEntry pe;
    pe.id = e.id;
    try {
      const cv::Mat3b image = read_image(data.root / e.image_path);
      seg::BinaryMask mask;
      if (opt.use_truth) {
        mask = read_mask(data.root / e.mask_path);
      } else {
        const seg::ProbabilityMask prob = models[fold_of_row[i]].predict(image);
        mask = seg::keep_largest_component(seg::binarize(prob, t));
      }
      seg::SquarePatch patch = seg::extract_patch(image, mask, opt.border, e.id.key());

      const std::string key = e.id.key();
      pe.patch_path = key + ".patch.png";
      pe.patch_mask_path = key + ".patch.mask.png";
      pe.full_mask_path = key + ".mask.png";
      seg::save_patch(patch, out / pe.patch_path);
      if (!cv::imwrite((out / pe.patch_mask_path).string(), patch.mask * 255))
        throw IoError("cannot write patch mask");
      if (!cv::imwrite((out / pe.full_mask_path).string(), mask * 255))
        throw IoError("cannot write mask");
    } catch (const SegmentationFailed& ex) {
      pe.ok = false;
      pe.reason = ex.what();
      ++pm.failure_count;
      std::cerr << "segmentation failed for " << e.id.key() << ": " << ex.what() << "\n";
    }
    pm.entries.push_back(std::move(pe));
  }

  save_patches_manifest(pm, out / "patches.json");
  std::cout << (out / "patches.json").string() << "\n";
  if (pm.failure_count * 10 > int(data.entries.size())) {
    std::cerr << "more than 10% of acquisitions failed segmentation ("
              << pm.failure_count << "/" << data.entries.size() << ")\n";
    return kExitData;
  }
  return kExitOk;
}

embedding::TrainSchedule schedule_from(const EmbedOptions& opt) {
  embedding::TrainSchedule s;
  s.epochs = opt.epochs;
  s.base_lr = opt.base_lr;
  s.decay_factor = opt.decay_factor;
  s.decay_period_epochs = opt.decay_period;
  s.batch_classes = opt.batch_classes;
  s.batch_samples = opt.batch_samples;
  s.margin = opt.margin;
  return s;
}

int run_train_embed(const std::string& patches, const std::string& out_model,
                    const EmbedOptions& opt) {
  const PatchesManifest pm = load_patches_manifest(patches);
  const auto items = load_labeled_patches(pm);
  std::vector<std::pair<seg::SquarePatch, ClassLabel>> train_set;
  for (const auto& lp : items) train_set.emplace_back(lp.patch, lp.id.label());

  embedding::EmbedderModel model = embedding::EmbedderModel::build(
      {opt.input_side, opt.dim, opt.normalize, opt.seed});
  std::cerr << "training embedder on " << train_set.size() << " patches for "
            << opt.epochs << " epochs\n";
  embedding::EmbedderModel trained =
      embedding::train_embedder(model, train_set, schedule_from(opt), opt.seed);
  trained.save(out_model);
  write_run_snapshot(fs::path(out_model).parent_path(), "train-embed",
                     json{{"patches", patches},
                          {"model", out_model},
                          {"input_side", opt.input_side},
                          {"dim", opt.dim},
                          {"normalize", opt.normalize},
                          {"epochs", opt.epochs},
                          {"base_lr", opt.base_lr},
                          {"decay_factor", opt.decay_factor},
                          {"decay_period", opt.decay_period},
                          {"batch_classes", opt.batch_classes},
                          {"batch_samples", opt.batch_samples},
                          {"margin", opt.margin},
                          {"seed", opt.seed}});
  std::cout << out_model << "\n";
  return kExitOk;
}

int run_embed(const std::string& patches, const std::string& model_path,
              const std::string& out_dir) {
  const PatchesManifest pm = load_patches_manifest(patches);
  const auto items = load_labeled_patches(pm);
  const embedding::EmbedderModel model = embedding::EmbedderModel::load(model_path);

  std::vector<embedding::EmbeddingRecord> records;
  for (const auto& lp : items)
    records.push_back({lp.id, embedding::embed(model, lp.patch)});

  const fs::path out(out_dir);
  write_run_snapshot(out, "embed", json{{"patches", patches}, {"model", model_path}});
  embedding::save_embeddings_csv(records, out / "embeddings.csv");
  embedding::save_embeddings_blob(records, out / "embeddings.bin");
  std::cout << (out / "embeddings.csv").string() << "\n";
  return kExitOk;
}

int run_baseline_extract(const std::string& patches, const std::string& out_dir,
                         const std::string& method, const BaselineOptions& opt) {
  const PatchesManifest pm = load_patches_manifest(patches);
  const auto items = load_labeled_patches(pm);
  const fs::path out(out_dir);
  write_run_snapshot(out, "baseline-extract",
                     json{{"patches", patches},
                          {"method", method},
                          {"bands", opt.bands},
                          {"angular", opt.angular},
                          {"wavelength", opt.wavelength},
                          {"grid_bands", opt.grid_bands},
                          {"grid_cells", opt.grid_cells}});

  baselines::LGConfig lg;
  lg.bands = opt.bands;
  lg.angular_positions = opt.angular;
  lg.wavelength = opt.wavelength;
  lg.sigma_over_f = opt.sigma_over_f;
  baselines::GridConfig grid;
  grid.bands = opt.grid_bands;
  grid.cells_per_band = opt.grid_cells;

  json piths = json::object();
  int failures = 0;
  for (const auto& lp : items) {
    const std::string key = lp.id.key();
    try {
      const baselines::PithEstimate pith = baselines::estimate_pith(lp.patch, lp.patch.mask);
      piths[key] = {{"x", pith.position.x},
                    {"y", pith.position.y},
                    {"confidence", pith.confidence}};
      if (method == "iris" || method == "both") {
        const double prealign = baselines::prealign_cm(lp.patch.mask, pith);
        const auto polar = baselines::polar_unwrap(lp.patch, pith, lg.bands,
                                                   lg.angular_positions, -prealign);
        baselines::save_template(baselines::log_gabor_encode(polar, lg),
                                 out / (key + ".iris"));
      }
      if (method == "circular-grid" || method == "both") {
        baselines::save_template(
            baselines::circular_grid_features(lp.patch, lp.patch.mask, pith, grid),
            out / (key + ".grid"));
      }
    } catch (const std::exception& ex) {
      ++failures;
      std::cerr << "template extraction failed for " << key << ": " << ex.what() << "\n";
    }
  }
  {
    std::ofstream os(out / "piths.json");
    os << piths.dump(2) << "\n";
  }
  std::cout << out.string() << "\n";
  return failures * 10 > int(items.size()) ? kExitData : kExitOk;
}

eval::Trainer make_embedder_trainer(const EmbedOptions& opt) {
  return [opt](std::span<const eval::LabeledPatch> train,
               std::span<const eval::LabeledPatch> eval_fold) -> eval::Comparator {
    std::vector<std::pair<seg::SquarePatch, ClassLabel>> train_set;
    train_set.reserve(train.size());
    for (const auto& lp : train) train_set.emplace_back(lp.patch, lp.id.label());
    embedding::EmbedderModel model = embedding::EmbedderModel::build(
        {opt.input_side, opt.dim, opt.normalize, opt.seed});
    embedding::EmbedderModel trained = embedding::train_embedder(
        model, train_set, schedule_from(opt), opt.seed);

    auto embeddings = std::make_shared<std::vector<embedding::EmbeddingVector>>();
    embeddings->reserve(eval_fold.size());
    for (const auto& lp : eval_fold)
      embeddings->push_back(embedding::embed(trained, lp.patch));
    return [embeddings](size_t i, size_t j) {
      return embedding::euclidean_distance((*embeddings)[i], (*embeddings)[j]);
    };
  };
}

eval::Trainer make_iris_trainer(const BaselineOptions& opt) {
  return [opt](std::span<const eval::LabeledPatch>,
               std::span<const eval::LabeledPatch> eval_fold) -> eval::Comparator {
    baselines::LGConfig lg;
    lg.bands = opt.bands;
    lg.angular_positions = opt.angular;
    lg.wavelength = opt.wavelength;
    lg.sigma_over_f = opt.sigma_over_f;
    auto templates =
        std::make_shared<std::vector<std::optional<baselines::IrisTemplate>>>();
    for (const auto& lp : eval_fold) {
      try {
        const auto pith = baselines::estimate_pith(lp.patch, lp.patch.mask);
        const double prealign = baselines::prealign_cm(lp.patch.mask, pith);
        const auto polar = baselines::polar_unwrap(lp.patch, pith, lg.bands,
                                                   lg.angular_positions, -prealign);
        templates->push_back(baselines::log_gabor_encode(polar, lg));
      } catch (const std::exception&) {
        templates->push_back(std::nullopt);
      }
    }
    const int max_shift = opt.max_shift;
    return [templates, max_shift](size_t i, size_t j) {
      if (!(*templates)[i] || !(*templates)[j])
        throw IncomparableTemplates("template extraction failed");
      return baselines::iris_compare(*(*templates)[i], *(*templates)[j], max_shift);
    };
  };
}

eval::Trainer make_grid_trainer(const BaselineOptions& opt) {
  return [opt](std::span<const eval::LabeledPatch>,
               std::span<const eval::LabeledPatch> eval_fold) -> eval::Comparator {
    baselines::GridConfig grid;
    grid.bands = opt.grid_bands;
    grid.cells_per_band = opt.grid_cells;
    auto templates =
        std::make_shared<std::vector<std::optional<baselines::CircularGridTemplate>>>();
    for (const auto& lp : eval_fold) {
      try {
        const auto pith = baselines::estimate_pith(lp.patch, lp.patch.mask);
        templates->push_back(
            baselines::circular_grid_features(lp.patch, lp.patch.mask, pith, grid));
      } catch (const std::exception&) {
        templates->push_back(std::nullopt);
      }
    }
    return [templates](size_t i, size_t j) {
      if (!(*templates)[i] || !(*templates)[j])
        throw IncomparableTemplates("template extraction failed");
      return baselines::circular_grid_compare(*(*templates)[i], *(*templates)[j]);
    };
  };
}

int run_evaluate(const EvaluateOptions& opt, const EmbedOptions& emb,
                 const BaselineOptions& base) {
  const PatchesManifest pm = load_patches_manifest(opt.patches);
  const auto items = load_labeled_patches(pm);

  std::vector<std::string> log_ids;
  for (const auto& lp : items)
    if (std::find(log_ids.begin(), log_ids.end(), lp.id.log_id) == log_ids.end())
      log_ids.push_back(lp.id.log_id);
  const eval::FoldAssignment folds = eval::make_folds(log_ids, opt.folds, opt.fold_seed);

  std::vector<eval::LabeledPatch> extra;
  if (!opt.extra.empty()) {
    const PatchesManifest em = load_patches_manifest(opt.extra);
    extra = load_labeled_patches(em);
  }
  if (opt.regime == "sqnet+" && extra.empty())
    throw InvalidInput("sqnet+ regime requires --extra training patches");

  eval::Trainer trainer;
  std::string regime_tag;
  if (opt.method == "embedder") {
    trainer = make_embedder_trainer(emb);
    regime_tag = opt.regime == "sqnet+" ? "SqNet+" : "SqNet";
  } else if (opt.method == "iris") {
    trainer = make_iris_trainer(base);
    regime_tag = "iris";
  } else if (opt.method == "circular-grid") {
    trainer = make_grid_trainer(base);
    regime_tag = "circular-grid";
  } else {
    throw InvalidInput("unknown method: " + opt.method);
  }

  const fs::path out(opt.out);
  write_run_snapshot(out, "evaluate",
                     json{{"patches", opt.patches},
                          {"method", opt.method},
                          {"regime", opt.regime},
                          {"extra", opt.extra},
                          {"folds", opt.folds},
                          {"fold_seed", opt.fold_seed},
                          {"embed_seed", emb.seed},
                          {"epochs", emb.epochs}});

  std::vector<eval::FoldScores> fold_scores;
  const eval::EERReport report = eval::cross_validate(
      items, folds, trainer, extra.empty() ? nullptr : &extra, regime_tag, &fold_scores);

  report.save_json(out / "report.json");
  for (size_t f = 0; f < fold_scores.size(); ++f)
    eval::save_scores_csv(fold_scores[f].records,
                          out / ("scores_fold" + std::to_string(f) + ".csv"));
  const std::string table = eval::render_report_table({report});
  {
    std::ofstream os(out / "table.txt");
    os << table;
  }
  std::cout << table;
  std::cout << "mean EER: " << report.mean_eer << "\n";
  return kExitOk;
}

int run_report(const std::vector<std::string>& inputs, const std::string& out_file) {
  std::vector<eval::EERReport> reports;
  for (const auto& path : inputs) reports.push_back(eval::EERReport::load_json(path));
  const std::string table = eval::render_report_table(reports);
  if (!out_file.empty()) {
    std::ofstream os(out_file);
    if (!os) throw IoError("cannot write table: " + out_file);
    os << table;
  }
  std::cout << table;
  return kExitOk;
}

// Config file: JSON with one section per subcommand; explicit flags override.
void apply_config_file(const std::string& path, SynthOptions& synth,
                       SegmentOptions& segment, EmbedOptions& emb,
                       BaselineOptions& base, EvaluateOptions& evaluate) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config file: " + path);
  json j;
  is >> j;

  if (j.contains("synth")) {
    const auto& s = j["synth"];
    synth.tag = s.value("tag", synth.tag);
    synth.logs = s.value("logs", synth.logs);
    synth.acqs = s.value("acqs", synth.acqs);
    synth.size = s.value("size", synth.size);
    synth.seed = s.value("seed", synth.seed);
  }
  if (j.contains("segmentation")) {
    const auto& s = j["segmentation"];
    segment.epochs = s.value("epochs", segment.epochs);
    segment.internal_size = s.value("internal_size", segment.internal_size);
    segment.border = s.value("border", segment.border);
    segment.default_threshold = s.value("default_threshold", segment.default_threshold);
    segment.seed = s.value("seed", segment.seed);
    if (s.contains("thresholds"))
      for (const auto& [tag, t] : s["thresholds"].items())
        segment.threshold_map[tag] = t.get<double>();
  }
  if (j.contains("embedding")) {
    const auto& s = j["embedding"];
    emb.input_side = s.value("input_side", emb.input_side);
    emb.dim = s.value("dim", emb.dim);
    emb.normalize = s.value("normalize", emb.normalize);
    emb.epochs = s.value("epochs", emb.epochs);
    emb.base_lr = s.value("base_lr", emb.base_lr);
    emb.decay_factor = s.value("decay_factor", emb.decay_factor);
    emb.decay_period = s.value("decay_period", emb.decay_period);
    emb.batch_classes = s.value("batch_classes", emb.batch_classes);
    emb.batch_samples = s.value("batch_samples", emb.batch_samples);
    emb.margin = s.value("margin", emb.margin);
    emb.seed = s.value("seed", emb.seed);
  }
  if (j.contains("baselines")) {
    const auto& s = j["baselines"];
    base.bands = s.value("bands", base.bands);
    base.angular = s.value("angular", base.angular);
    base.wavelength = s.value("wavelength", base.wavelength);
    base.sigma_over_f = s.value("sigma_over_f", base.sigma_over_f);
    base.max_shift = s.value("max_shift", base.max_shift);
    base.grid_bands = s.value("grid_bands", base.grid_bands);
    base.grid_cells = s.value("grid_cells", base.grid_cells);
  }
  if (j.contains("evaluation")) {
    const auto& s = j["evaluation"];
    evaluate.folds = s.value("folds", evaluate.folds);
    evaluate.fold_seed = s.value("fold_seed", evaluate.fold_seed);
    evaluate.regime = s.value("regime", evaluate.regime);
  }
}

void apply_synth_profile(SynthOptions& opt) {
  if (opt.profile == "default") return;
  struct Preset {
    int logs, acqs;
    const char* tag;
  };
  static const std::map<std::string, Preset> presets = {
      {"hldb-fh", {100, 4, "FH"}}, {"hldb-fl", {100, 4, "FL"}},
      {"hldb-sm", {100, 3, "SM"}}, {"hldb-r", {100, 4, "R"}},
      {"hldb-s", {100, 6, "S"}},   {"mva", {279, 4, "MVA"}}};
  auto it = presets.find(opt.profile);
  if (it == presets.end()) throw InvalidInput("unknown profile: " + opt.profile);
  opt.logs = it->second.logs;
  opt.acqs = it->second.acqs;
  opt.tag = it->second.tag;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wood log identification toolkit"};
  app.set_version_flag("--app-version", kVersion);

  SynthOptions synth;
  SegmentOptions segment;
  EmbedOptions emb;
  BaselineOptions base;
  EvaluateOptions evaluate;

  // the config file loads before flag parsing so flags win
  std::string config_path;
  for (int i = 1; i < argc - 1; ++i)
    if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
  try {
    if (!config_path.empty())
      apply_config_file(config_path, synth, segment, emb, base, evaluate);
  } catch (const std::exception& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return kExitConfig;
  }
  std::string config_sink;
  app.add_option("--config", config_sink, "JSON config file (flags override)");

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--out", synth.out, "output root directory")->required();
  synth_cmd->add_option("--profile", synth.profile,
                        "preset: default|hldb-fh|hldb-fl|hldb-sm|hldb-r|hldb-s|mva");
  synth_cmd->add_option("--tag", synth.tag, "dataset tag");
  synth_cmd->add_option("--logs", synth.logs, "number of logs");
  synth_cmd->add_option("--acqs", synth.acqs, "acquisitions per end");
  synth_cmd->add_option("--size", synth.size, "image side in pixels");
  synth_cmd->add_option("--seed", synth.seed, "master seed");

  auto* seg_cmd = app.add_subcommand("segment", "segment a dataset into patches");
  seg_cmd->add_option("--data", segment.data, "dataset manifest to segment")->required();
  seg_cmd->add_option("--train-data", segment.train_data,
                      "dataset manifest with ground truth for training");
  seg_cmd->add_option("--model", segment.model, "segmenter blob to load or save");
  seg_cmd->add_option("--out", segment.out, "output directory")->required();
  seg_cmd->add_option("--epochs", segment.epochs, "training epochs");
  seg_cmd->add_option("--internal-size", segment.internal_size, "net input resolution");
  seg_cmd->add_option("--border", segment.border, "black border width");
  seg_cmd->add_option("--threshold", segment.threshold,
                      "binarization threshold override (otherwise per-tag map)");
  seg_cmd->add_option("--seed", segment.seed, "training seed");
  seg_cmd->add_flag("--use-truth", segment.use_truth,
                    "use ground-truth masks instead of a model");
  seg_cmd->add_flag("--cross-validate", segment.cross_validate,
                    "per-fold training, predictions on the held-out fold");
  seg_cmd->add_option("--folds", segment.folds, "fold count for --cross-validate");
  seg_cmd->add_option("--fold-seed", segment.fold_seed, "fold assignment seed");

  std::string patches_path, model_path, out_path, method = "embedder";
  auto add_embed_options = [&](CLI::App* cmd) {
    cmd->add_option("--input-side", emb.input_side, "net input side");
    cmd->add_option("--dim", emb.dim, "embedding dimension");
    cmd->add_option("--epochs", emb.epochs, "training epochs");
    cmd->add_option("--base-lr", emb.base_lr, "initial learning rate");
    cmd->add_option("--decay-factor", emb.decay_factor, "lr divisor per period");
    cmd->add_option("--decay-period", emb.decay_period, "epochs between decays");
    cmd->add_option("--batch-classes", emb.batch_classes, "classes per batch");
    cmd->add_option("--batch-samples", emb.batch_samples, "samples per class");
    cmd->add_option("--margin", emb.margin, "triplet margin");
    cmd->add_option("--seed", emb.seed, "training seed");
    cmd->add_flag("!--no-normalize", emb.normalize, "disable L2 normalization");
  };
  auto add_baseline_options = [&](CLI::App* cmd) {
    cmd->add_option("--bands", base.bands, "iris radial bands");
    cmd->add_option("--angular", base.angular, "iris angular positions");
    cmd->add_option("--wavelength", base.wavelength, "log-Gabor center wavelength");
    cmd->add_option("--max-shift", base.max_shift, "iris shift compensation range");
    cmd->add_option("--grid-bands", base.grid_bands, "circular grid bands");
    cmd->add_option("--grid-cells", base.grid_cells, "circular grid cells per band");
  };

  auto* train_cmd = app.add_subcommand("train-embed", "train the embedding model");
  train_cmd->add_option("--patches", patches_path, "patches manifest")->required();
  train_cmd->add_option("--out", out_path, "output model path")->required();
  add_embed_options(train_cmd);

  auto* embed_cmd = app.add_subcommand("embed", "embed patches with a trained model");
  embed_cmd->add_option("--patches", patches_path, "patches manifest")->required();
  embed_cmd->add_option("--model", model_path, "trained model blob")->required();
  embed_cmd->add_option("--out", out_path, "output directory")->required();

  auto* extract_cmd =
      app.add_subcommand("baseline-extract", "compute piths and baseline templates");
  extract_cmd->add_option("--patches", patches_path, "patches manifest")->required();
  extract_cmd->add_option("--out", out_path, "output directory")->required();
  extract_cmd->add_option("--method", method, "iris|circular-grid|both")
      ->default_val("both");
  add_baseline_options(extract_cmd);

  auto* eval_cmd = app.add_subcommand("evaluate", "k-fold verification EER");
  eval_cmd->add_option("--patches", evaluate.patches, "patches manifest")->required();
  eval_cmd->add_option("--method", evaluate.method, "embedder|iris|circular-grid")
      ->required();
  eval_cmd->add_option("--regime", evaluate.regime, "sqnet|sqnet+");
  eval_cmd->add_option("--extra", evaluate.extra,
                       "extra training patches manifest (sqnet+)");
  eval_cmd->add_option("--out", evaluate.out, "output directory")->required();
  eval_cmd->add_option("--folds", evaluate.folds, "fold count");
  eval_cmd->add_option("--fold-seed", evaluate.fold_seed, "fold assignment seed");
  add_embed_options(eval_cmd);
  add_baseline_options(eval_cmd);

  std::vector<std::string> report_inputs;
  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "merge reports into one table");
  report_cmd->add_option("--in", report_inputs, "report JSON files")->required();
  report_cmd->add_option("--out", report_out, "table output file");

  app.require_subcommand(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (synth_cmd->parsed()) {
      // presets fill anything the user did not set explicitly
      SynthOptions resolved = synth;
      if (synth_cmd->count("--profile")) {
        SynthOptions preset = synth;
        apply_synth_profile(preset);
        resolved.logs = synth_cmd->count("--logs") ? synth.logs : preset.logs;
        resolved.acqs = synth_cmd->count("--acqs") ? synth.acqs : preset.acqs;
        resolved.tag = synth_cmd->count("--tag") ? synth.tag : preset.tag;
      }
      return run_synth(resolved);
    }
    if (seg_cmd->parsed()) return run_segment(segment);
    if (train_cmd->parsed()) return run_train_embed(patches_path, out_path, emb);
    if (embed_cmd->parsed()) return run_embed(patches_path, model_path, out_path);
    if (extract_cmd->parsed())
      return run_baseline_extract(patches_path, out_path, method, base);
    if (eval_cmd->parsed()) return run_evaluate(evaluate, emb, base);
    if (report_cmd->parsed()) return run_report(report_inputs, report_out);
  } catch (const ProtocolError& ex) {
    std::cerr << "protocol error: " << ex.what() << "\n";
    return kExitProtocol;
  } catch (const InvalidInput& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const IoError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return kExitData;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return kExitOk;
}
