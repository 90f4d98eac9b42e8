#include "logid/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <json.hpp>

namespace logid::seg {

namespace {

nn::Tensor image_to_tensor(const cv::Mat3b& img) {
  nn::Tensor t(3, img.rows, img.cols);
  for (int y = 0; y < img.rows; ++y)
    for (int x = 0; x < img.cols; ++x)
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = img(y, x)[c] / 255.f;
  return t;
}

// Encoder-decoder emitting logits at half the internal resolution.
std::shared_ptr<nn::Net> build_net(std::uint64_t seed) {
  Rng rng(seed_combine(seed, 0x5E6));
  auto net = std::make_shared<nn::Net>();
  net->add(nn::make_conv2d(3, 8, 3, 1, 1, rng));
  net->add(nn::make_relu());
  net->add(nn::make_maxpool2());
  net->add(nn::make_conv2d(8, 16, 3, 1, 1, rng));
  net->add(nn::make_relu());
  net->add(nn::make_maxpool2());
  net->add(nn::make_conv2d(16, 24, 3, 1, 1, rng));
  net->add(nn::make_relu());
  net->add(nn::make_upsample2());
  net->add(nn::make_conv2d(24, 12, 3, 1, 1, rng));
  net->add(nn::make_relu());
  net->add(nn::make_conv2d(12, 1, 1, 1, 0, rng));
  return net;
}

}  // namespace

BinaryMask binarize(const ProbabilityMask& mask, double t) {
  if (!(t > 0.0 && t < 1.0)) throw InvalidInput("binarize: t must lie in (0,1)");
  BinaryMask out(mask.size());
  for (int y = 0; y < mask.rows; ++y)
    for (int x = 0; x < mask.cols; ++x) out(y, x) = mask(y, x) < t ? 0 : 1;
  return out;
}

double pixel_accuracy(const BinaryMask& pred, const BinaryMask& truth) {
  if (pred.size() != truth.size())
    throw InvalidInput("pixel_accuracy: shape mismatch");
  if (pred.empty()) throw InvalidInput("pixel_accuracy: empty masks");
  long agree = 0;
  for (int y = 0; y < pred.rows; ++y)
    for (int x = 0; x < pred.cols; ++x)
      if ((pred(y, x) != 0) == (truth(y, x) != 0)) ++agree;
  return double(agree) / (double(pred.rows) * pred.cols);
}

BinaryMask keep_largest_component(const BinaryMask& mask) {
  cv::Mat labels, stats, centroids;
  int n = cv::connectedComponentsWithStats(mask, labels, stats, centroids, 8, CV_32S);
  if (n <= 2) return mask.clone();
  int best = 1;
  for (int i = 2; i < n; ++i)
    if (stats.at<int>(i, cv::CC_STAT_AREA) > stats.at<int>(best, cv::CC_STAT_AREA))
      best = i;
  BinaryMask out(mask.size(), std::uint8_t(0));
  for (int y = 0; y < mask.rows; ++y)
    for (int x = 0; x < mask.cols; ++x)
      if (labels.at<int>(y, x) == best) out(y, x) = 1;
  return out;
}

SquarePatch extract_patch(const cv::Mat3b& image, const BinaryMask& mask,
                          int border, const std::string& source) {
  if (border < 0) throw InvalidInput("extract_patch: border must be >= 0");
  if (image.size() != mask.size())
    throw InvalidInput("extract_patch: image/mask shape mismatch");
  int r0 = mask.rows, r1 = -1, c0 = mask.cols, c1 = -1;
  for (int y = 0; y < mask.rows; ++y)
    for (int x = 0; x < mask.cols; ++x)
      if (mask(y, x)) {
        r0 = std::min(r0, y);
        r1 = std::max(r1, y);
        c0 = std::min(c0, x);
        c1 = std::max(c1, x);
      }
  if (r1 < 0) throw SegmentationFailed("extract_patch: empty mask");

  const int h = r1 - r0 + 1, w = c1 - c0 + 1;
  const int s0 = std::max(h, w);
  const int side = s0 + 2 * border;
  const int top = r0 - (s0 - h) / 2 - border;
  const int left = c0 - (s0 - w) / 2 - border;

  SquarePatch patch;
  patch.pixels = cv::Mat3b(side, side, cv::Vec3b(0, 0, 0));
  patch.mask = BinaryMask(side, side, std::uint8_t(0));
  patch.source = source;
  patch.origin = {left, top};
  patch.border = border;
  for (int py = 0; py < side; ++py) {
    const int sy = top + py;
    if (sy < 0 || sy >= image.rows) continue;
    for (int px = 0; px < side; ++px) {
      const int sx = left + px;
      if (sx < 0 || sx >= image.cols) continue;
      if (mask(sy, sx)) {
        patch.pixels(py, px) = image(sy, sx);
        patch.mask(py, px) = 1;
      }
    }
  }
  return patch;
}

void save_patch(const SquarePatch& patch, const std::filesystem::path& png_path) {
  if (!cv::imwrite(png_path.string(), patch.pixels))
    throw IoError("cannot write patch: " + png_path.string());
}

SegmenterModel SegmenterModel::create(int internal_size, std::uint64_t seed) {
  if (internal_size < 32 || internal_size % 4 != 0)
    throw InvalidInput("SegmenterModel: internal_size must be >= 32 and divisible by 4");
  SegmenterModel m;
  m.internal_size_ = internal_size;
  m.net_ = build_net(seed);
  return m;
}

ProbabilityMask SegmenterModel::predict(const cv::Mat3b& image) const {
  if (image.rows < 16 || image.cols < 16)
    throw InvalidInput("predict: image too small");
  cv::Mat3b resized;
  cv::resize(image, resized, {internal_size_, internal_size_}, 0, 0, cv::INTER_LINEAR);
  nn::Tensor logits = net_->infer(image_to_tensor(resized));
  cv::Mat1f prob(logits.h, logits.w);
  for (int y = 0; y < logits.h; ++y)
    for (int x = 0; x < logits.w; ++x)
      prob(y, x) = 1.f / (1.f + std::exp(-logits.at(0, y, x)));
  ProbabilityMask out;
  cv::resize(prob, out, image.size(), 0, 0, cv::INTER_LINEAR);
  for (int y = 0; y < out.rows; ++y)
    for (int x = 0; x < out.cols; ++x) out(y, x) = std::clamp(out(y, x), 0.f, 1.f);
  return out;
}

void SegmenterModel::save(const std::filesystem::path& blob_path) const {
  net_->save_params(blob_path.string());
  nlohmann::json j{{"input_size", internal_size_},
                   {"version", version_},
                   {"training_config", training_config_}};
  std::ofstream os(blob_path.string() + ".json");
  if (!os) throw IoError("cannot write model sidecar: " + blob_path.string());
  os << j.dump(2) << "\n";
}

SegmenterModel SegmenterModel::load(const std::filesystem::path& blob_path) {
  std::ifstream is(blob_path.string() + ".json");
  if (!is) throw IoError("cannot read model sidecar: " + blob_path.string() + ".json");
  nlohmann::json j;
  is >> j;
  SegmenterModel m = create(j.at("input_size").get<int>(), 0);
  m.version_ = j.at("version").get<std::string>();
  m.training_config_ = j.value("training_config", "");
  m.net_->load_params(blob_path.string());
  return m;
}

SegmenterModel train_segmenter(
    const std::vector<std::pair<cv::Mat3b, BinaryMask>>& train_set,
    const SegTrainConfig& cfg) {
  if (train_set.empty()) throw InvalidInput("train_segmenter: empty train set");
  for (const auto& [img, mask] : train_set)
    if (img.size() != mask.size())
      throw InvalidInput("train_segmenter: image/mask shape mismatch");
  if (cfg.epochs < 0) throw InvalidInput("train_segmenter: negative epochs");

  SegmenterModel model = SegmenterModel::create(cfg.internal_size, cfg.seed);
  {
    nlohmann::json j{{"epochs", cfg.epochs},
                     {"internal_size", cfg.internal_size},
                     {"batch_size", cfg.batch_size},
                     {"lr", cfg.lr},
                     {"seed", cfg.seed},
                     {"train_samples", train_set.size()}};
    model.training_config_ = j.dump();
  }
  if (cfg.epochs == 0) return model;

  const int d = cfg.internal_size, od = d / 2;
  std::vector<nn::Tensor> inputs;
  std::vector<cv::Mat1f> targets;
  inputs.reserve(train_set.size());
  for (const auto& [img, mask] : train_set) {
    cv::Mat3b ri;
    cv::resize(img, ri, {d, d}, 0, 0, cv::INTER_LINEAR);
    inputs.push_back(image_to_tensor(ri));
    cv::Mat1b rm;
    cv::resize(mask, rm, {od, od}, 0, 0, cv::INTER_NEAREST);
    cv::Mat1f t(od, od);
    for (int y = 0; y < od; ++y)
      for (int x = 0; x < od; ++x) t(y, x) = rm(y, x) ? 1.f : 0.f;
    targets.push_back(std::move(t));
  }

  nn::Net& net = *model.net_;
  nn::Adam opt(cfg.lr);
  Rng order_rng(seed_combine(cfg.seed, 0x0BD3));
  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng.engine());
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const int bs = int(std::min(order.size() - start, size_t(cfg.batch_size)));
      nn::Grads grads = net.make_grads();
      nn::accumulate_batch(bs, net, grads, [&](int bi, nn::Grads& g) {
        const int si = order[start + bi];
        nn::Tape tape;
        nn::Tensor logits = net.forward(inputs[si], tape);
        // fused sigmoid + mean binary cross entropy: d/dlogit = p - t
        nn::Tensor dlogit(1, od, od);
        const float inv = 1.f / float(od * od);
        for (int y = 0; y < od; ++y)
          for (int x = 0; x < od; ++x) {
            const float p = 1.f / (1.f + std::exp(-logits.at(0, y, x)));
            dlogit.at(0, y, x) = (p - targets[si](y, x)) * inv;
          }
        net.backward(dlogit, tape, g);
      });
      grads.scale(1.f / float(bs));
      opt.step(net, grads);
    }
  }
  return model;
}

}  // namespace logid::seg
