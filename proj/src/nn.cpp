#include "logid/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <Eigen/Dense>
#include <omp.h>

namespace logid::nn {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

void he_init(std::vector<float>& w, int fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / fan_in);
  for (float& x : w) x = float(rng.normal(0.0, stddev));
}

class Conv2d final : public Layer {
 public:
  Conv2d(int cin, int cout, int k, int stride, int pad, Rng& rng)
      : cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(pad),
        w_(size_t(cout) * cin * k * k), b_(cout, 0.f) {
    he_init(w_, cin * k * k, rng);
  }

  std::string type() const override { return "conv2d"; }

  Tensor forward(const Tensor& x, LayerCtx* ctx) const override {
    const int oh = (x.h + 2 * pad_ - k_) / stride_ + 1;
    const int ow = (x.w + 2 * pad_ - k_) / stride_ + 1;
    Tensor cols = im2col(x, oh, ow);
    Tensor y(cout_, oh, ow);
    const int kk = cin_ * k_ * k_, n = oh * ow;
    CMapRM W(w_.data(), cout_, kk);
    CMapRM C(cols.v.data(), kk, n);
    MapRM Y(y.v.data(), cout_, n);
    Y.noalias() = W * C;
    for (int co = 0; co < cout_; ++co) Y.row(co).array() += b_[co];
    if (ctx) {
      ctx->clear();
      ctx->push_back(std::move(cols));
    }
    return y;
  }

  Tensor backward(const Tensor& dy, const LayerCtx& ctx,
                  std::vector<std::vector<float>>* grads) const override {
    return backward_impl(dy, ctx[0], grads ? &(*grads)[0] : nullptr,
                         grads ? &(*grads)[1] : nullptr);
  }

  // Shared with composite layers that own Conv2d children.
  Tensor backward_impl(const Tensor& dy, const Tensor& cols, std::vector<float>* gw,
                       std::vector<float>* gb) const {
    const int kk = cin_ * k_ * k_, n = dy.h * dy.w;
    CMapRM dY(dy.v.data(), cout_, n);
    CMapRM C(cols.v.data(), kk, n);
    if (gw) {
      MapRM GW(gw->data(), cout_, kk);
      GW.noalias() += dY * C.transpose();
    }
    if (gb) {
      for (int co = 0; co < cout_; ++co) gb->at(co) += dY.row(co).sum();
    }
    Tensor dcols(1, kk, n);
    MapRM dC(dcols.v.data(), kk, n);
    CMapRM W(w_.data(), cout_, kk);
    dC.noalias() = W.transpose() * dY;
    const int ih = (dy.h - 1) * stride_ - 2 * pad_ + k_;
    const int iw = (dy.w - 1) * stride_ - 2 * pad_ + k_;
    return col2im(dcols, ih, iw, dy.h, dy.w);
  }

  std::vector<ParamView> param_views() override {
    return {{w_.data(), w_.size()}, {b_.data(), b_.size()}};
  }

  int out_channels() const { return cout_; }

 private:
  Tensor im2col(const Tensor& x, int oh, int ow) const {
    Tensor cols(1, cin_ * k_ * k_, oh * ow);
    float* dst = cols.v.data();
    for (int ci = 0; ci < cin_; ++ci) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= x.h) {
              std::memset(dst, 0, sizeof(float) * ow);
              dst += ow;
              continue;
            }
            const float* src = &x.v[(size_t(ci) * x.h + iy) * x.w];
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              *dst++ = (ix >= 0 && ix < x.w) ? src[ix] : 0.f;
            }
          }
        }
      }
    }
    return cols;
  }

  Tensor col2im(const Tensor& dcols, int ih, int iw, int oh, int ow) const {
    Tensor dx(cin_, ih, iw);
    const float* src = dcols.v.data();
    for (int ci = 0; ci < cin_; ++ci) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= ih) {
              src += ow;
              continue;
            }
            float* dst = &dx.v[(size_t(ci) * ih + iy) * iw];
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix >= 0 && ix < iw) dst[ix] += src[ox];
            }
            src += ow;
          }
        }
      }
    }
    return dx;
  }

  int cin_, cout_, k_, stride_, pad_;
  std::vector<float> w_, b_;
};

class ReLU final : public Layer {
 public:
  std::string type() const override { return "relu"; }

  Tensor forward(const Tensor& x, LayerCtx* ctx) const override {
    Tensor y = x;
    for (float& v : y.v) v = v > 0 ? v : 0.f;
    if (ctx) {
      ctx->clear();
      ctx->push_back(x);
    }
    return y;
  }

  Tensor backward(const Tensor& dy, const LayerCtx& ctx,
                  std::vector<std::vector<float>>*) const override {
    const Tensor& x = ctx[0];
    Tensor dx = dy;
    for (size_t i = 0; i < dx.v.size(); ++i)
      if (x.v[i] <= 0) dx.v[i] = 0.f;
    return dx;
  }
};

class MaxPool2 final : public Layer {
 public:
  std::string type() const override { return "maxpool2"; }

  Tensor forward(const Tensor& x, LayerCtx* ctx) const override {
    const int oh = x.h / 2, ow = x.w / 2;
    Tensor y(x.c, oh, ow);
    Tensor idx(x.c, oh, ow);  // flat argmax within the channel plane
    for (int ci = 0; ci < x.c; ++ci) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          int best = -1;
          float bv = -std::numeric_limits<float>::infinity();
          for (int dy2 = 0; dy2 < 2; ++dy2) {
            for (int dx2 = 0; dx2 < 2; ++dx2) {
              const int iy = oy * 2 + dy2, ix = ox * 2 + dx2;
              const float v = x.at(ci, iy, ix);
              if (v > bv) {
                bv = v;
                best = iy * x.w + ix;
              }
            }
          }
          y.at(ci, oy, ox) = bv;
          idx.at(ci, oy, ox) = float(best);
        }
      }
    }
    if (ctx) {
      ctx->clear();
      Tensor dims(1, 1, 2);
      dims.v[0] = float(x.h);
      dims.v[1] = float(x.w);
      ctx->push_back(std::move(idx));
      ctx->push_back(std::move(dims));
    }
    return y;
  }

  Tensor backward(const Tensor& dy, const LayerCtx& ctx,
                  std::vector<std::vector<float>>*) const override {
    const Tensor& idx = ctx[0];
    const int ih = int(ctx[1].v[0]), iw = int(ctx[1].v[1]);
    Tensor dx(dy.c, ih, iw);
    for (int ci = 0; ci < dy.c; ++ci)
      for (int oy = 0; oy < dy.h; ++oy)
        for (int ox = 0; ox < dy.w; ++ox)
          dx.v[size_t(ci) * ih * iw + size_t(idx.at(ci, oy, ox))] += dy.at(ci, oy, ox);
    return dx;
  }
};

class Upsample2 final : public Layer {
 public:
  std::string type() const override { return "upsample2"; }

  Tensor forward(const Tensor& x, LayerCtx* ctx) const override {
    Tensor y(x.c, x.h * 2, x.w * 2);
    for (int ci = 0; ci < x.c; ++ci)
      for (int iy = 0; iy < x.h; ++iy)
        for (int ix = 0; ix < x.w; ++ix) {
          const float v = x.at(ci, iy, ix);
          y.at(ci, 2 * iy, 2 * ix) = v;
          y.at(ci, 2 * iy, 2 * ix + 1) = v;
          y.at(ci, 2 * iy + 1, 2 * ix) = v;
          y.at(ci, 2 * iy + 1, 2 * ix + 1) = v;
        }
    if (ctx) ctx->clear();
    return y;
  }

  Tensor backward(const Tensor& dy, const LayerCtx&,
                  std::vector<std::vector<float>>*) const override {
    Tensor dx(dy.c, dy.h / 2, dy.w / 2);
    for (int ci = 0; ci < dy.c; ++ci)
      for (int iy = 0; iy < dx.h; ++iy)
        for (int ix = 0; ix < dx.w; ++ix)
          dx.at(ci, iy, ix) = dy.at(ci, 2 * iy, 2 * ix) + dy.at(ci, 2 * iy, 2 * ix + 1) +
                              dy.at(ci, 2 * iy + 1, 2 * ix) +
                              dy.at(ci, 2 * iy + 1, 2 * ix + 1);
    return dx;
  }
};

class GlobalAvgPool final : public Layer {
 public:
  std::string type() const override { return "global_avg_pool"; }

  Tensor forward(const Tensor& x, LayerCtx* ctx) const override {
    Tensor y(x.c, 1, 1);
    const size_t plane = size_t(x.h) * x.w;
    for (int ci = 0; ci < x.c; ++ci) {
      double s = 0;
      for (size_t i = 0; i < plane; ++i) s += x.v[ci * plane + i];
      y.v[ci] = float(s / double(plane));
    }
    if (ctx) {
      ctx->clear();
      Tensor dims(1, 1, 2);
      dims.v[0] = float(x.h);
      dims.v[1] = float(x.w);
      ctx->push_back(std::move(dims));
    }
    return y;
  }

  Tensor backward(const Tensor& dy, const LayerCtx& ctx,
                  std::vector<std::vector<float>>*) const override {
    const int ih = int(ctx[0].v[0]), iw = int(ctx[0].v[1]);
    Tensor dx(dy.c, ih, iw);
    const float inv = 1.f / float(ih * iw);
    for (int ci = 0; ci < dy.c; ++ci) {
      const float g = dy.v[ci] * inv;
      for (int i = 0; i < ih * iw; ++i) dx.v[size_t(ci) * ih * iw + i] = g;
    }
    return dx;
  }
};

class L2Normalize final : public Layer {
 public:
  std::string type() const override { return "l2_normalize"; }

  Tensor forward(const Tensor& x, LayerCtx* ctx) const override {
    double ss = 0;
    for (float v : x.v) ss += double(v) * v;
    const float norm = float(std::max(std::sqrt(ss), 1e-12));
    Tensor y = x;
    for (float& v : y.v) v /= norm;
    if (ctx) {
      ctx->clear();
      Tensor saved = y;
      Tensor n(1, 1, 1);
      n.v[0] = norm;
      ctx->push_back(std::move(saved));
      ctx->push_back(std::move(n));
    }
    return y;
  }

  Tensor backward(const Tensor& dy, const LayerCtx& ctx,
                  std::vector<std::vector<float>>*) const override {
    const Tensor& y = ctx[0];
    const float norm = ctx[1].v[0];
    double dot = 0;
    for (size_t i = 0; i < dy.v.size(); ++i) dot += double(dy.v[i]) * y.v[i];
    Tensor dx = dy;
    for (size_t i = 0; i < dx.v.size(); ++i)
      dx.v[i] = (dy.v[i] - float(dot) * y.v[i]) / norm;
    return dx;
  }
};

class Fire final : public Layer {
 public:
  Fire(int cin, int squeeze, int expand, Rng& rng)
      : squeeze_(cin, squeeze, 1, 1, 0, rng),
        expand1_(squeeze, expand, 1, 1, 0, rng),
        expand3_(squeeze, expand, 3, 1, 1, rng),
        expand_(expand) {}

  std::string type() const override { return "fire"; }

  Tensor forward(const Tensor& x, LayerCtx* ctx) const override {
    LayerCtx sq_ctx, e1_ctx, e3_ctx;
    Tensor s_pre = squeeze_.forward(x, ctx ? &sq_ctx : nullptr);
    Tensor s = s_pre;
    for (float& v : s.v) v = v > 0 ? v : 0.f;
    Tensor y1 = expand1_.forward(s, ctx ? &e1_ctx : nullptr);
    Tensor y3 = expand3_.forward(s, ctx ? &e3_ctx : nullptr);
    Tensor y_pre(2 * expand_, y1.h, y1.w);
    std::copy(y1.v.begin(), y1.v.end(), y_pre.v.begin());
    std::copy(y3.v.begin(), y3.v.end(), y_pre.v.begin() + y1.v.size());
    Tensor y = y_pre;
    for (float& v : y.v) v = v > 0 ? v : 0.f;
    if (ctx) {
      ctx->clear();
      ctx->push_back(std::move(sq_ctx[0]));
      ctx->push_back(std::move(s_pre));
      ctx->push_back(std::move(e1_ctx[0]));
      ctx->push_back(std::move(e3_ctx[0]));
      ctx->push_back(std::move(y_pre));
    }
    return y;
  }

  Tensor backward(const Tensor& dy, const LayerCtx& ctx,
                  std::vector<std::vector<float>>* grads) const override {
    const Tensor& y_pre = ctx[4];
    Tensor dpre = dy;
    for (size_t i = 0; i < dpre.v.size(); ++i)
      if (y_pre.v[i] <= 0) dpre.v[i] = 0.f;
    Tensor d1(expand_, dy.h, dy.w), d3(expand_, dy.h, dy.w);
    std::copy(dpre.v.begin(), dpre.v.begin() + d1.v.size(), d1.v.begin());
    std::copy(dpre.v.begin() + d1.v.size(), dpre.v.end(), d3.v.begin());

    Tensor ds1 = expand1_.backward_impl(d1, ctx[2], grads ? &(*grads)[2] : nullptr,
                                        grads ? &(*grads)[3] : nullptr);
    Tensor ds3 = expand3_.backward_impl(d3, ctx[3], grads ? &(*grads)[4] : nullptr,
                                        grads ? &(*grads)[5] : nullptr);
    const Tensor& s_pre = ctx[1];
    Tensor ds = ds1;
    for (size_t i = 0; i < ds.v.size(); ++i) {
      ds.v[i] += ds3.v[i];
      if (s_pre.v[i] <= 0) ds.v[i] = 0.f;
    }
    return squeeze_.backward_impl(ds, ctx[0], grads ? &(*grads)[0] : nullptr,
                                  grads ? &(*grads)[1] : nullptr);
  }

  std::vector<ParamView> param_views() override {
    std::vector<ParamView> out;
    for (auto& v : squeeze_.param_views()) out.push_back(v);
    for (auto& v : expand1_.param_views()) out.push_back(v);
    for (auto& v : expand3_.param_views()) out.push_back(v);
    return out;
  }

 private:
  Conv2d squeeze_, expand1_, expand3_;
  int expand_;
};

}  // namespace

std::unique_ptr<Layer> make_conv2d(int cin, int cout, int kernel, int stride, int pad,
                                   Rng& rng) {
  return std::make_unique<Conv2d>(cin, cout, kernel, stride, pad, rng);
}
std::unique_ptr<Layer> make_relu() { return std::make_unique<ReLU>(); }
std::unique_ptr<Layer> make_maxpool2() { return std::make_unique<MaxPool2>(); }
std::unique_ptr<Layer> make_upsample2() { return std::make_unique<Upsample2>(); }
std::unique_ptr<Layer> make_global_avg_pool() { return std::make_unique<GlobalAvgPool>(); }
std::unique_ptr<Layer> make_l2_normalize() { return std::make_unique<L2Normalize>(); }
std::unique_ptr<Layer> make_fire(int cin, int squeeze, int expand, Rng& rng) {
  return std::make_unique<Fire>(cin, squeeze, expand, rng);
}

void Grads::add(const Grads& other) {
  for (size_t l = 0; l < by_layer.size(); ++l)
    for (size_t p = 0; p < by_layer[l].size(); ++p) {
      auto& dst = by_layer[l][p];
      const auto& src = other.by_layer[l][p];
      for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
}

void Grads::scale(float f) {
  for (auto& layer : by_layer)
    for (auto& p : layer)
      for (float& v : p) v *= f;
}

Tensor Net::infer(const Tensor& x) const {
  Tensor cur = x;
  for (const auto& layer : layers_) cur = layer->forward(cur, nullptr);
  return cur;
}

Tensor Net::forward(const Tensor& x, Tape& tape) const {
  tape.ctx.resize(layers_.size());
  Tensor cur = x;
  for (size_t i = 0; i < layers_.size(); ++i) cur = layers_[i]->forward(cur, &tape.ctx[i]);
  return cur;
}

void Net::backward(const Tensor& dy, const Tape& tape, Grads& grads) const {
  Tensor cur = dy;
  for (size_t i = layers_.size(); i-- > 0;) {
    auto* g = grads.by_layer[i].empty() ? nullptr : &grads.by_layer[i];
    cur = layers_[i]->backward(cur, tape.ctx[i], g);
  }
}

Grads Net::make_grads() {
  Grads g;
  g.by_layer.resize(layers_.size());
  for (size_t i = 0; i < layers_.size(); ++i)
    for (const auto& view : layers_[i]->param_views())
      g.by_layer[i].emplace_back(view.n, 0.f);
  return g;
}

std::vector<ParamView> Net::all_params() {
  std::vector<ParamView> out;
  for (auto& layer : layers_)
    for (auto& v : layer->param_views()) out.push_back(v);
  return out;
}

size_t Net::param_count() {
  size_t n = 0;
  for (auto& v : all_params()) n += v.n;
  return n;
}

void Net::save_params(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write model params: " + path);
  const char magic[4] = {'L', 'N', 'N', 'P'};
  os.write(magic, 4);
  const auto params = all_params();
  const std::uint32_t n = std::uint32_t(params.size());
  os.write(reinterpret_cast<const char*>(&n), sizeof n);
  for (const auto& v : params) {
    const std::uint64_t sz = v.n;
    os.write(reinterpret_cast<const char*>(&sz), sizeof sz);
    os.write(reinterpret_cast<const char*>(v.data), std::streamsize(sz * sizeof(float)));
  }
}

void Net::load_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read model params: " + path);
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, "LNNP", 4) != 0)
    throw IoError("bad model file magic: " + path);
  std::uint32_t n = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof n);
  auto params = all_params();
  if (n != params.size()) throw IoError("model file does not match architecture: " + path);
  for (auto& v : params) {
    std::uint64_t sz = 0;
    is.read(reinterpret_cast<char*>(&sz), sizeof sz);
    if (sz != v.n) throw IoError("model file does not match architecture: " + path);
    is.read(reinterpret_cast<char*>(v.data), std::streamsize(sz * sizeof(float)));
  }
  if (!is) throw IoError("truncated model file: " + path);
}

void SgdMomentum::step(Net& net, const Grads& grads, double lr) {
  auto params = net.all_params();
  if (velocity_.empty()) {
    velocity_.reserve(params.size());
    for (const auto& p : params) velocity_.emplace_back(p.n, 0.f);
  }
  size_t flat = 0;
  for (size_t l = 0; l < grads.by_layer.size(); ++l) {
    for (size_t pi = 0; pi < grads.by_layer[l].size(); ++pi, ++flat) {
      auto& vel = velocity_[flat];
      const auto& g = grads.by_layer[l][pi];
      float* w = params[flat].data;
      for (size_t i = 0; i < g.size(); ++i) {
        vel[i] = float(momentum_ * vel[i] - lr * g[i]);
        w[i] += vel[i];
      }
    }
  }
}

void Adam::step(Net& net, const Grads& grads) {
  auto params = net.all_params();
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.n, 0.f);
      v_.emplace_back(p.n, 0.f);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, double(t_));
  const double bc2 = 1.0 - std::pow(beta2_, double(t_));
  size_t flat = 0;
  for (size_t l = 0; l < grads.by_layer.size(); ++l) {
    for (size_t pi = 0; pi < grads.by_layer[l].size(); ++pi, ++flat) {
      const auto& g = grads.by_layer[l][pi];
      float* w = params[flat].data;
      for (size_t i = 0; i < g.size(); ++i) {
        m_[flat][i] = float(beta1_ * m_[flat][i] + (1 - beta1_) * g[i]);
        v_[flat][i] = float(beta2_ * v_[flat][i] + (1 - beta2_) * double(g[i]) * g[i]);
        const double mh = m_[flat][i] / bc1;
        const double vh = v_[flat][i] / bc2;
        w[i] -= float(lr_ * mh / (std::sqrt(vh) + eps_));
      }
    }
  }
}

void accumulate_batch(int batch_size, Net& net, Grads& out,
                      const std::function<void(int, Grads&)>& backward_one) {
  const int nthreads = omp_get_max_threads();
  std::vector<Grads> partial;
  partial.reserve(nthreads);
  for (int t = 0; t < nthreads; ++t) partial.push_back(net.make_grads());
#pragma omp parallel for schedule(static)
  for (int i = 0; i < batch_size; ++i) backward_one(i, partial[omp_get_thread_num()]);
  for (int t = 0; t < nthreads; ++t) out.add(partial[t]);
}

}  // namespace logid::nn
