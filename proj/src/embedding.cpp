#include "logid/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>

#include <opencv2/imgproc.hpp>

#include <json.hpp>

namespace logid::embedding {

namespace {

nn::Tensor image_to_tensor(const cv::Mat3b& img) {
  nn::Tensor t(3, img.rows, img.cols);
  for (int y = 0; y < img.rows; ++y)
    for (int x = 0; x < img.cols; ++x)
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = img(y, x)[c] / 255.f;
  return t;
}

std::shared_ptr<nn::Net> build_net(const EmbedderConfig& cfg) {
  Rng rng(seed_combine(cfg.seed, 0xE3B));
  auto net = std::make_shared<nn::Net>();
  net->add(nn::make_conv2d(3, 16, 3, 2, 1, rng));
  net->add(nn::make_relu());
  net->add(nn::make_maxpool2());
  net->add(nn::make_fire(16, 8, 16, rng));
  net->add(nn::make_maxpool2());
  net->add(nn::make_fire(32, 16, 32, rng));
  net->add(nn::make_maxpool2());
  net->add(nn::make_fire(64, 24, 48, rng));
  net->add(nn::make_conv2d(96, cfg.dim, 1, 1, 0, rng));
  net->add(nn::make_global_avg_pool());
  if (cfg.normalize) net->add(nn::make_l2_normalize());
  return net;
}

double sq_dist(const EmbeddingVector& a, const EmbeddingVector& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - b[i];
    s += d * d;
  }
  return s;
}

nn::Tensor prepare_input(const cv::Mat3b& img224, int input_side) {
  if (img224.rows == input_side && img224.cols == input_side)
    return image_to_tensor(img224);
  cv::Mat3b resized;
  cv::resize(img224, resized, {input_side, input_side}, 0, 0, cv::INTER_LINEAR);
  return image_to_tensor(resized);
}

}  // namespace

double TrainSchedule::lr_at(int epoch) const {
  return base_lr / std::pow(decay_factor, std::floor(double(epoch) / decay_period_epochs));
}

void TrainSchedule::validate() const {
  if (epochs < 0) throw InvalidInput("TrainSchedule: epochs must be >= 0");
  if (!(base_lr > 0)) throw InvalidInput("TrainSchedule: base_lr must be positive");
  if (!(decay_factor > 1)) throw InvalidInput("TrainSchedule: decay_factor must be > 1");
  if (decay_period_epochs < 1)
    throw InvalidInput("TrainSchedule: decay_period_epochs must be >= 1");
  if (batch_classes < 2 || batch_samples < 1)
    throw InvalidInput("TrainSchedule: batch must cover >= 2 classes");
  if (!(margin > 0)) throw InvalidInput("TrainSchedule: margin must be positive");
}

double triplet_loss(const EmbeddingVector& a, const EmbeddingVector& p,
                    const EmbeddingVector& n, double margin) {
  if (a.size() != p.size() || a.size() != n.size())
    throw InvalidInput("triplet_loss: dimension mismatch");
  if (!(margin > 0)) throw InvalidInput("triplet_loss: margin must be positive");
  return std::max(0.0, sq_dist(a, p) - sq_dist(a, n) + margin);
}

TripletGrads triplet_loss_grad(const EmbeddingVector& a, const EmbeddingVector& p,
                               const EmbeddingVector& n, double margin) {
  const double loss = triplet_loss(a, p, n, margin);
  TripletGrads g;
  g.d_anchor.assign(a.size(), 0.f);
  g.d_positive.assign(a.size(), 0.f);
  g.d_negative.assign(a.size(), 0.f);
  if (loss <= 0) return g;
  for (size_t i = 0; i < a.size(); ++i) {
    g.d_anchor[i] = 2.f * (n[i] - p[i]);
    g.d_positive[i] = 2.f * (p[i] - a[i]);
    g.d_negative[i] = 2.f * (a[i] - n[i]);
  }
  return g;
}

std::vector<Triplet> mine_hard_triplets(const std::vector<EmbeddingVector>& embeddings,
                                        const std::vector<ClassLabel>& labels,
                                        double margin) {
  if (embeddings.size() != labels.size())
    throw InvalidInput("mine_hard_triplets: embeddings/labels size mismatch");
  const int n = int(embeddings.size());
  std::vector<double> d2(size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      d2[size_t(i) * n + j] = d2[size_t(j) * n + i] = sq_dist(embeddings[i], embeddings[j]);

  std::vector<Triplet> out;
  for (int a = 0; a < n; ++a) {
    for (int p = 0; p < n; ++p) {
      if (p == a || !(labels[p] == labels[a])) continue;
      for (int g = 0; g < n; ++g) {
        if (labels[g] == labels[a]) continue;
        if (same_log_different_end(labels[a], labels[g])) continue;
        if (d2[size_t(a) * n + p] - d2[size_t(a) * n + g] + margin > 0)
          out.push_back({a, p, g});
      }
    }
  }
  return out;
}

cv::Mat3b augment_with(const seg::SquarePatch& patch, double angle_deg, int off_x,
                       int off_y) {
  if (patch.pixels.empty()) throw InvalidInput("augment: empty patch");
  if (off_x < 0 || off_y < 0 || off_x > kAugmentResize - kAugmentCrop ||
      off_y > kAugmentResize - kAugmentCrop)
    throw InvalidInput("augment: crop offset out of range");
  const cv::Mat3b& src = patch.pixels;
  const double center = (src.rows - 1) / 2.0;
  const double th = angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  cv::Mat m(2, 3, CV_64F);
  m.at<double>(0, 0) = c;
  m.at<double>(0, 1) = -s;
  m.at<double>(0, 2) = center - center * c + center * s;
  m.at<double>(1, 0) = s;
  m.at<double>(1, 1) = c;
  m.at<double>(1, 2) = center - center * s - center * c;
  cv::Mat3b rotated;
  cv::warpAffine(src, rotated, m, src.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT,
                 cv::Scalar(0, 0, 0));
  cv::Mat3b resized;
  cv::resize(rotated, resized, {kAugmentResize, kAugmentResize}, 0, 0, cv::INTER_LINEAR);
  return resized(cv::Rect(off_x, off_y, kAugmentCrop, kAugmentCrop)).clone();
}

cv::Mat3b augment(const seg::SquarePatch& patch, std::uint64_t seed) {
  Rng rng(seed_combine(seed, 0xA06));
  const double angle = rng.uniform(0.0, 360.0);
  const int span = kAugmentResize - kAugmentCrop;
  const int off_x = rng.uniform_int(0, span);
  const int off_y = rng.uniform_int(0, span);
  return augment_with(patch, angle, off_x, off_y);
}

EmbedderModel EmbedderModel::build(const EmbedderConfig& cfg) {
  if (cfg.input_side < 32 || cfg.input_side % 16 != 0)
    throw InvalidInput("build_embedder: input_side must be >= 32 and divisible by 16");
  if (cfg.dim < 2) throw InvalidInput("build_embedder: dim must be >= 2");
  EmbedderModel m;
  m.cfg_ = cfg;
  m.net_ = build_net(cfg);
  return m;
}

EmbedderModel EmbedderModel::clone() const {
  EmbedderModel m = build(cfg_);
  m.training_config = training_config;
  auto src = net_->all_params();
  auto dst = m.net_->all_params();
  for (size_t i = 0; i < src.size(); ++i)
    std::memcpy(dst[i].data, src[i].data, src[i].n * sizeof(float));
  return m;
}

void EmbedderModel::save(const std::filesystem::path& blob_path) const {
  net_->save_params(blob_path.string());
  nlohmann::json j{{"input_side", cfg_.input_side},
                   {"dim", cfg_.dim},
                   {"normalize", cfg_.normalize},
                   {"version", "embedder-v1"},
                   {"training_config", training_config}};
  std::ofstream os(blob_path.string() + ".json");
  if (!os) throw IoError("cannot write model sidecar: " + blob_path.string());
  os << j.dump(2) << "\n";
}

EmbedderModel EmbedderModel::load(const std::filesystem::path& blob_path) {
  std::ifstream is(blob_path.string() + ".json");
  if (!is) throw IoError("cannot read model sidecar: " + blob_path.string() + ".json");
  nlohmann::json j;
  is >> j;
  EmbedderConfig cfg;
  cfg.input_side = j.at("input_side").get<int>();
  cfg.dim = j.at("dim").get<int>();
  cfg.normalize = j.at("normalize").get<bool>();
  EmbedderModel m = build(cfg);
  m.training_config = j.value("training_config", "");
  m.net_->load_params(blob_path.string());
  return m;
}

EmbeddingVector embed(const EmbedderModel& model, const seg::SquarePatch& patch) {
  if (patch.pixels.empty()) throw InvalidInput("embed: empty patch");
  nn::Tensor input = prepare_input(patch.pixels, model.config().input_side);
  nn::Tensor out = model.net().infer(input);
  return {out.v.begin(), out.v.end()};
}

EmbedderModel train_embedder(const EmbedderModel& model,
                             const std::vector<std::pair<seg::SquarePatch, ClassLabel>>& train_set,
                             const TrainSchedule& schedule, std::uint64_t seed,
                             std::vector<double>* lr_trace) {
  schedule.validate();
  std::map<std::pair<std::string, int>, std::vector<int>> by_class;
  for (int i = 0; i < int(train_set.size()); ++i) {
    const auto& lbl = train_set[i].second;
    by_class[{lbl.log_id, int(lbl.end)}].push_back(i);
  }
  if (by_class.size() < 2)
    throw InvalidInput("train_embedder: need at least 2 classes");

  EmbedderModel trained = model.clone();
  if (lr_trace) lr_trace->clear();
  if (schedule.epochs == 0) return trained;

  std::vector<std::vector<int>> classes;
  classes.reserve(by_class.size());
  for (auto& [key, idx] : by_class) classes.push_back(idx);

  const int c_per_batch = std::min<int>(schedule.batch_classes, int(classes.size()));
  nn::Net& net = trained.net();
  nn::SgdMomentum opt(0.9);
  const int input_side = trained.config().input_side;
  Rng sampler(seed_combine(seed, 0x7A1));

  const int n = int(train_set.size());
  const int nominal_batch = schedule.batch_classes * schedule.batch_samples;
  const int steps_per_epoch = std::max(1, (n + nominal_batch - 1) / nominal_batch);

  std::vector<int> class_order(classes.size());
  std::iota(class_order.begin(), class_order.end(), 0);

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    const double lr = schedule.lr_at(epoch);
    if (lr_trace) lr_trace->push_back(lr);
    for (int step = 0; step < steps_per_epoch; ++step) {
      // balanced batch: C classes x up to K samples each
      std::shuffle(class_order.begin(), class_order.end(), sampler.engine());
      std::vector<int> batch_idx;
      for (int ci = 0; ci < c_per_batch; ++ci) {
        auto cls = classes[class_order[ci]];
        std::shuffle(cls.begin(), cls.end(), sampler.engine());
        const int take = std::min<int>(schedule.batch_samples, int(cls.size()));
        batch_idx.insert(batch_idx.end(), cls.begin(), cls.begin() + take);
      }
      const int bs = int(batch_idx.size());

      std::vector<nn::Tensor> inputs(bs);
      std::vector<ClassLabel> labels(bs);
      std::vector<std::uint64_t> aug_seeds(bs);
      for (int i = 0; i < bs; ++i) {
        labels[i] = train_set[batch_idx[i]].second;
        aug_seeds[i] = seed_combine(seed, epoch, step * 1000 + i);
      }
#pragma omp parallel for schedule(static)
      for (int i = 0; i < bs; ++i) {
        cv::Mat3b img = augment(train_set[batch_idx[i]].first, aug_seeds[i]);
        inputs[i] = prepare_input(img, input_side);
      }

      std::vector<nn::Tape> tapes(bs);
      std::vector<EmbeddingVector> embeddings(bs);
#pragma omp parallel for schedule(static)
      for (int i = 0; i < bs; ++i) {
        nn::Tensor out = net.forward(inputs[i], tapes[i]);
        embeddings[i].assign(out.v.begin(), out.v.end());
      }

      const auto triplets = mine_hard_triplets(embeddings, labels, schedule.margin);
      if (triplets.empty()) continue;

      const int dim = int(embeddings[0].size());
      std::vector<std::vector<float>> demb(bs, std::vector<float>(dim, 0.f));
      const float scale = 1.f / float(triplets.size());
      for (const auto& t : triplets) {
        const auto &a = embeddings[t.anchor], &p = embeddings[t.positive],
                   &g = embeddings[t.negative];
        for (int i = 0; i < dim; ++i) {
          demb[t.anchor][i] += 2.f * (g[i] - p[i]) * scale;
          demb[t.positive][i] += 2.f * (p[i] - a[i]) * scale;
          demb[t.negative][i] += 2.f * (a[i] - g[i]) * scale;
        }
      }

      nn::Grads grads = net.make_grads();
      nn::accumulate_batch(bs, net, grads, [&](int i, nn::Grads& g) {
        bool nonzero = false;
        for (float v : demb[i])
          if (v != 0.f) {
            nonzero = true;
            break;
          }
        if (!nonzero) return;
        nn::Tensor dy(dim, 1, 1);
        std::copy(demb[i].begin(), demb[i].end(), dy.v.begin());
        net.backward(dy, tapes[i], g);
      });
      opt.step(net, grads, lr);
    }
  }

  nlohmann::json j{{"epochs", schedule.epochs},
                   {"base_lr", schedule.base_lr},
                   {"decay_factor", schedule.decay_factor},
                   {"decay_period_epochs", schedule.decay_period_epochs},
                   {"batch_classes", schedule.batch_classes},
                   {"batch_samples", schedule.batch_samples},
                   {"margin", schedule.margin},
                   {"seed", seed},
                   {"train_samples", train_set.size()}};
  trained.training_config = j.dump();
  return trained;
}

void save_embeddings_csv(const std::vector<EmbeddingRecord>& records,
                         const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write embeddings csv: " + path.string());
  const size_t dim = records.empty() ? 0 : records[0].values.size();
  os << "log_id,end,acq_index,dataset_tag";
  for (size_t i = 0; i < dim; ++i) os << ",e" << i;
  os << "\n";
  os.precision(9);
  for (const auto& r : records) {
    os << r.id.log_id << "," << to_string(r.id.end) << "," << r.id.acq_index << ","
       << r.id.dataset_tag;
    for (float v : r.values) os << "," << v;
    os << "\n";
  }
}

void save_embeddings_blob(const std::vector<EmbeddingRecord>& records,
                          const std::filesystem::path& path) {
  nlohmann::json header;
  header["dim"] = records.empty() ? 0 : records[0].values.size();
  header["count"] = records.size();
  header["items"] = nlohmann::json::array();
  for (const auto& r : records)
    header["items"].push_back({{"log_id", r.id.log_id},
                               {"end", to_string(r.id.end)},
                               {"acq_index", r.id.acq_index},
                               {"dataset_tag", r.id.dataset_tag}});
  const std::string hs = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write embeddings blob: " + path.string());
  os.write("LEMB", 4);
  const std::uint64_t hlen = hs.size();
  os.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  os.write(hs.data(), std::streamsize(hs.size()));
  for (const auto& r : records)
    os.write(reinterpret_cast<const char*>(r.values.data()),
             std::streamsize(r.values.size() * sizeof(float)));
}

std::vector<EmbeddingRecord> load_embeddings_blob(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read embeddings blob: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, "LEMB", 4) != 0)
    throw IoError("bad embeddings blob magic: " + path.string());
  std::uint64_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  std::string hs(hlen, '\0');
  is.read(hs.data(), std::streamsize(hlen));
  nlohmann::json header = nlohmann::json::parse(hs);
  const size_t dim = header.at("dim").get<size_t>();
  std::vector<EmbeddingRecord> out;
  for (const auto& item : header.at("items")) {
    EmbeddingRecord r;
    r.id.log_id = item.at("log_id").get<std::string>();
    r.id.end = end_side_from_string(item.at("end").get<std::string>());
    r.id.acq_index = item.at("acq_index").get<int>();
    r.id.dataset_tag = item.at("dataset_tag").get<std::string>();
    r.values.resize(dim);
    is.read(reinterpret_cast<char*>(r.values.data()),
            std::streamsize(dim * sizeof(float)));
    out.push_back(std::move(r));
  }
  if (!is) throw IoError("truncated embeddings blob: " + path.string());
  return out;
}

double euclidean_distance(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.size() != b.size()) throw InvalidInput("euclidean_distance: dimension mismatch");
  return std::sqrt(sq_dist(a, b));
}

}  // namespace logid::embedding
