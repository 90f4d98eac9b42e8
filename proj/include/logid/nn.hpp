#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "logid/common.hpp"

namespace logid::nn {

// CHW float tensor. Small fixed-architecture nets push these through layer
// by layer; batching happens at the caller via parallel per-sample passes.
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(size_t(c_) * h_ * w_, 0.f) {}

  float& at(int ci, int y, int x) { return v[(size_t(ci) * h + y) * w + x]; }
  float at(int ci, int y, int x) const { return v[(size_t(ci) * h + y) * w + x]; }
  size_t size() const { return v.size(); }
};

struct ParamView {
  float* data = nullptr;
  size_t n = 0;
};

// Per-layer scratch produced by forward and consumed by backward.
using LayerCtx = std::vector<Tensor>;

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string type() const = 0;
  virtual Tensor forward(const Tensor& x, LayerCtx* ctx) const = 0;
  // `grads` is aligned with param_views(); may be null for stateless layers.
  virtual Tensor backward(const Tensor& dy, const LayerCtx& ctx,
                          std::vector<std::vector<float>>* grads) const = 0;
  virtual std::vector<ParamView> param_views() { return {}; }
};

std::unique_ptr<Layer> make_conv2d(int cin, int cout, int kernel, int stride, int pad,
                                   Rng& rng);
std::unique_ptr<Layer> make_relu();
std::unique_ptr<Layer> make_maxpool2();
std::unique_ptr<Layer> make_upsample2();
std::unique_ptr<Layer> make_global_avg_pool();
std::unique_ptr<Layer> make_l2_normalize();
// SqueezeNet-style fire module: 1x1 squeeze, parallel 1x1 + 3x3 expands,
// channel concat; output has 2*expand channels.
std::unique_ptr<Layer> make_fire(int cin, int squeeze, int expand, Rng& rng);

// Gradients aligned with the net's layers and their param views.
struct Grads {
  std::vector<std::vector<std::vector<float>>> by_layer;

  void add(const Grads& other);
  void scale(float f);
};

struct Tape {
  std::vector<LayerCtx> ctx;  // one per layer
};

class Net {
 public:
  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  size_t layer_count() const { return layers_.size(); }

  Tensor infer(const Tensor& x) const;
  Tensor forward(const Tensor& x, Tape& tape) const;
  // dy: gradient w.r.t. the net output; accumulates into `grads`.
  void backward(const Tensor& dy, const Tape& tape, Grads& grads) const;

  Grads make_grads();
  std::vector<ParamView> all_params();
  size_t param_count();

  void save_params(const std::string& path);
  void load_params(const std::string& path);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum = 0.9) : momentum_(momentum) {}
  void step(Net& net, const Grads& grads, double lr);

 private:
  double momentum_;
  std::vector<std::vector<float>> velocity_;
};

class Adam {
 public:
  Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(Net& net, const Grads& grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

// Mean gradient over a batch, computed with per-thread accumulators and a
// fixed reduction order so results do not depend on scheduling.
// `backward_one(i, grads)` must run forward+backward for sample i.
void accumulate_batch(int batch_size, Net& net, Grads& out,
                      const std::function<void(int, Grads&)>& backward_one);

}  // namespace logid::nn
