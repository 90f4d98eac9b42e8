#include "logid/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>

#include <opencv2/imgproc.hpp>

#include <json.hpp>

namespace logid::baselines {

namespace {

constexpr double kPi = std::numbers::pi;
// Sign threshold for code bits; responses this close to zero encode 0.
constexpr double kTieEps = 1e-7;

cv::Mat1f to_gray(const cv::Mat3b& img) {
  cv::Mat gray;
  cv::cvtColor(img, gray, cv::COLOR_BGR2GRAY);
  cv::Mat1f out;
  gray.convertTo(out, CV_32F, 1.0 / 255.0);
  return out;
}

cv::Point2d mask_centroid(const seg::BinaryMask& mask) {
  double sx = 0, sy = 0;
  long n = 0;
  for (int y = 0; y < mask.rows; ++y)
    for (int x = 0; x < mask.cols; ++x)
      if (mask(y, x)) {
        sx += x;
        sy += y;
        ++n;
      }
  if (n == 0) throw InvalidInput("mask is empty");
  return {sx / n, sy / n};
}

bool inside_mask(const seg::BinaryMask& mask, cv::Point2d p) {
  const int x = int(std::lround(p.x)), y = int(std::lround(p.y));
  return x >= 0 && y >= 0 && x < mask.cols && y < mask.rows && mask(y, x) != 0;
}

float bilinear(const cv::Mat1f& img, double x, double y) {
  const int x0 = int(std::floor(x)), y0 = int(std::floor(y));
  const int x1 = std::min(x0 + 1, img.cols - 1), y1 = std::min(y0 + 1, img.rows - 1);
  const int cx0 = std::clamp(x0, 0, img.cols - 1), cy0 = std::clamp(y0, 0, img.rows - 1);
  const double fx = x - x0, fy = y - y0;
  return float((1 - fx) * (1 - fy) * img(cy0, cx0) + fx * (1 - fy) * img(cy0, x1) +
               (1 - fx) * fy * img(y1, cx0) + fx * fy * img(y1, x1));
}

// Ray direction for angle counterclockwise from "up" under the project's
// y-down, ccw-positive convention.
inline cv::Point2d ray_dir(double alpha) { return {std::sin(alpha), -std::cos(alpha)}; }

// Distance from `origin` to the mask boundary along `dir`; 0 when the very
// first steps already leave the mask. Bisection refines the crossing to
// subpixel precision.
double boundary_radius(const seg::BinaryMask& mask, cv::Point2d origin, cv::Point2d dir) {
  double inside = 0;
  for (double t = 1.0;; t += 0.5) {
    if (!inside_mask(mask, origin + t * dir)) break;
    inside = t;
  }
  if (inside == 0) return 0;
  double outside = inside + 0.5;
  for (int it = 0; it < 4; ++it) {
    const double mid = 0.5 * (inside + outside);
    (inside_mask(mask, origin + mid * dir) ? inside : outside) = mid;
  }
  return inside;
}

PolarImage unwrap_core(const cv::Mat1f& gray, const seg::BinaryMask& mask,
                       cv::Point2d pith, int bands, int angular,
                       double reference_rad = 0.0) {
  PolarImage out;
  out.values = cv::Mat1f(bands, angular, 0.f);
  out.valid = cv::Mat1b(bands, angular, std::uint8_t(0));
  for (int j = 0; j < angular; ++j) {
    const cv::Point2d dir = ray_dir(reference_rad + 2.0 * kPi * j / angular);
    const double rj = boundary_radius(mask, pith, dir);
    if (rj < 2.0) continue;
    for (int b = 0; b < bands; ++b) {
      const double r = (b + 0.5) / bands * rj;
      const cv::Point2d p = pith + r * dir;
      out.values(b, j) = bilinear(gray, p.x, p.y);
      out.valid(b, j) = inside_mask(mask, p) ? 1 : 0;
    }
  }
  return out;
}

std::vector<std::vector<std::complex<double>>> log_gabor_kernels(const LGConfig& cfg) {
  const int a = cfg.angular_positions;
  std::vector<std::vector<std::complex<double>>> kernels;
  for (int s = 0; s < cfg.n_scales; ++s) {
    const double wavelength = cfg.wavelength * std::pow(cfg.scale_step, s);
    const double f0 = 1.0 / wavelength;
    const double denom = 2.0 * std::pow(std::log(cfg.sigma_over_f), 2.0);
    std::vector<double> g(a, 0.0);
    for (int u = 1; u <= a / 2; ++u) {
      const double f = double(u) / a;
      g[u] = std::exp(-std::pow(std::log(f / f0), 2.0) / denom);
    }
    // one-sided spectrum -> complex (analytic) impulse response
    std::vector<std::complex<double>> h(a);
    for (int k = 0; k < a; ++k) {
      std::complex<double> acc = 0;
      for (int u = 1; u <= a / 2; ++u) {
        const double ph = 2.0 * kPi * u * k / a;
        acc += g[u] * std::complex<double>(std::cos(ph), std::sin(ph));
      }
      h[k] = acc / double(a);
    }
    kernels.push_back(std::move(h));
  }
  return kernels;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::uint64_t LGConfig::hash() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "lg|%d|%d|%.9g|%.9g|%d|%.9g", bands, angular_positions,
                wavelength, sigma_over_f, n_scales, scale_step);
  return fnv1a(buf);
}

std::uint64_t GridConfig::hash() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "grid|%d|%d|%d|%d|%d|%d", bands, cells_per_band,
                orientation_bins, frequency_bins, radial_samples_per_band,
                angular_samples_per_cell);
  return fnv1a(buf);
}

PithEstimate estimate_pith(const seg::SquarePatch& patch, const seg::BinaryMask& mask) {
  if (cv::countNonZero(mask) == 0) throw InvalidInput("estimate_pith: empty mask");
  const cv::Mat1f gray = to_gray(patch.pixels);

  // Interior only: the mask rim's hard edge to black would dominate the
  // orientation field. The blur below spreads edge energy up to 4*sqrt(2)
  // px past the Sobel band, so erode comfortably beyond that.
  cv::Mat1b interior;
  cv::erode(mask, interior, cv::getStructuringElement(cv::MORPH_ELLIPSE, {21, 21}));

  cv::Mat1f gx, gy;
  cv::Sobel(gray, gx, CV_32F, 1, 0, 3);
  cv::Sobel(gray, gy, CV_32F, 0, 1, 3);
  cv::Mat1f jxx = gx.mul(gx), jyy = gy.mul(gy), jxy = gx.mul(gy);
  cv::GaussianBlur(jxx, jxx, {9, 9}, 2.0);
  cv::GaussianBlur(jyy, jyy, {9, 9}, 2.0);
  cv::GaussianBlur(jxy, jxy, {9, 9}, 2.0);

  struct Voter {
    int x, y;
    double theta;
  };
  std::vector<Voter> voters;
  for (int y = 0; y < gray.rows; ++y) {
    for (int x = 0; x < gray.cols; ++x) {
      if (!interior(y, x)) continue;
      const double e = double(jxx(y, x)) + jyy(y, x);
      if (e < 1e-6) continue;
      const double d = double(jxx(y, x)) - jyy(y, x);
      const double coherence = std::sqrt(d * d + 4.0 * double(jxy(y, x)) * jxy(y, x)) / e;
      if (coherence < 0.2) continue;
      // dominant gradient direction = normal to the local ring
      voters.push_back({x, y, 0.5 * std::atan2(2.0 * jxy(y, x), d)});
    }
  }
  if (voters.size() < 100) {
    return {mask_centroid(mask), 0.0};
  }

  cv::Mat1f acc(gray.size(), 0.f);
  for (const auto& v : voters) {
    const double dx = std::cos(v.theta), dy = std::sin(v.theta);
    // march both directions; unit steps along the dominant axis
    const double ax = std::abs(dx), ay = std::abs(dy);
    const double sx = dx / std::max(ax, ay), sy = dy / std::max(ax, ay);
    for (int dir = -1; dir <= 1; dir += 2) {
      double px = v.x, py = v.y;
      for (;;) {
        px += dir * sx;
        py += dir * sy;
        const int ix = int(std::lround(px)), iy = int(std::lround(py));
        if (ix < 0 || iy < 0 || ix >= acc.cols || iy >= acc.rows || !mask(iy, ix)) break;
        acc(iy, ix) += 1.f;
      }
    }
  }
  cv::GaussianBlur(acc, acc, {9, 9}, 2.0);

  cv::Point best(-1, -1);
  float best_v = -1.f;
  for (int y = 0; y < acc.rows; ++y)
    for (int x = 0; x < acc.cols; ++x)
      if (mask(y, x) && acc(y, x) > best_v) {
        best_v = acc(y, x);
        best = {x, y};
      }

  // subpixel refinement: intensity-weighted centroid of the 5x5 peak window
  double wx = 0, wy = 0, wsum = 0;
  for (int dy2 = -2; dy2 <= 2; ++dy2)
    for (int dx2 = -2; dx2 <= 2; ++dx2) {
      const int x = best.x + dx2, y = best.y + dy2;
      if (x < 0 || y < 0 || x >= acc.cols || y >= acc.rows) continue;
      wx += acc(y, x) * x;
      wy += acc(y, x) * y;
      wsum += acc(y, x);
    }
  cv::Point2d pos = wsum > 0 ? cv::Point2d{wx / wsum, wy / wsum}
                             : cv::Point2d{double(best.x), double(best.y)};
  if (!inside_mask(mask, pos)) pos = {double(best.x), double(best.y)};

  const double confidence = std::clamp(double(best_v) / (0.05 * voters.size()), 0.0, 1.0);
  return {pos, confidence};
}

double prealign_cm(const seg::BinaryMask& mask, const PithEstimate& pith) {
  const cv::Point2d cm = mask_centroid(mask);
  const cv::Point2d v = pith.position - cm;
  if (std::hypot(v.x, v.y) < 1.0) return 0.0;
  const double phi = std::atan2(v.y, v.x);
  double alpha = (-kPi / 2.0 - phi) * 180.0 / kPi;
  while (alpha <= -180.0) alpha += 360.0;
  while (alpha > 180.0) alpha -= 360.0;
  return alpha;
}

PolarImage polar_unwrap(const seg::SquarePatch& patch, const PithEstimate& pith,
                        int bands, int angular_positions, double reference_deg) {
  if (bands < 1) throw InvalidInput("polar_unwrap: bands must be >= 1");
  if (angular_positions < 8) throw InvalidInput("polar_unwrap: angular_positions < 8");
  seg::BinaryMask mask = patch.mask;
  if (mask.empty()) {
    // patches constructed without an explicit mask: foreground = nonzero
    mask = seg::BinaryMask(patch.pixels.size(), std::uint8_t(0));
    for (int y = 0; y < patch.pixels.rows; ++y)
      for (int x = 0; x < patch.pixels.cols; ++x) {
        const auto& px = patch.pixels(y, x);
        if (px[0] || px[1] || px[2]) mask(y, x) = 1;
      }
  }
  if (!inside_mask(mask, pith.position))
    throw InvalidInput("polar_unwrap: pith outside the foreground");
  return unwrap_core(to_gray(patch.pixels), mask, pith.position, bands,
                     angular_positions, reference_deg * kPi / 180.0);
}

IrisTemplate log_gabor_encode(const PolarImage& polar, const LGConfig& config) {
  if (polar.values.rows != config.bands || polar.values.cols != config.angular_positions)
    throw InvalidInput("log_gabor_encode: polar dimensions do not match config");
  const int a = config.angular_positions;
  const auto kernels = log_gabor_kernels(config);

  IrisTemplate t;
  t.bands = config.bands;
  t.angular = a;
  t.bits_per_cell = 2 * config.n_scales;
  t.code.assign(size_t(t.bands) * a * t.bits_per_cell, 0);
  t.valid.assign(size_t(t.bands) * a, 0);
  t.config_hash = config.hash();

  std::vector<double> row(a);
  for (int b = 0; b < t.bands; ++b) {
    for (int j = 0; j < a; ++j) row[j] = polar.values(b, j);
    for (int s = 0; s < config.n_scales; ++s) {
      const auto& h = kernels[s];
      for (int i = 0; i < a; ++i) {
        std::complex<double> resp = 0;
        for (int k = 0; k < a; ++k) resp += h[k] * row[(i + k) % a];
        const size_t base = (size_t(b) * a + i) * t.bits_per_cell + 2 * s;
        t.code[base] = resp.real() > kTieEps ? 1 : 0;
        t.code[base + 1] = resp.imag() > kTieEps ? 1 : 0;
      }
    }
    for (int i = 0; i < a; ++i) t.valid[size_t(b) * a + i] = polar.valid(b, i);
  }
  return t;
}

double iris_compare(const IrisTemplate& t1, const IrisTemplate& t2, int max_shift) {
  if (t1.bands != t2.bands || t1.angular != t2.angular ||
      t1.bits_per_cell != t2.bits_per_cell)
    throw InvalidInput("iris_compare: template shape mismatch");
  if (t1.config_hash != t2.config_hash)
    throw IncomparableTemplates("iris_compare: templates built with different configs");
  const int a = t1.angular;
  double best = -1.0;
  for (int s = -max_shift; s <= max_shift; ++s) {
    long mismatches = 0, total = 0;
    for (int b = 0; b < t1.bands; ++b) {
      for (int i = 0; i < a; ++i) {
        const int j = ((i + s) % a + a) % a;
        if (!t1.is_valid(b, i) || !t2.is_valid(b, j)) continue;
        total += t1.bits_per_cell;
        for (int k = 0; k < t1.bits_per_cell; ++k)
          if (t1.bit(b, i, k) != t2.bit(b, j, k)) ++mismatches;
      }
    }
    if (total == 0) continue;
    const double score = double(mismatches) / double(total);
    if (best < 0 || score < best) best = score;
  }
  if (best < 0)
    throw IncomparableTemplates("iris_compare: no mutually valid cells at any shift");
  return best;
}

IrisTemplate shift_template(const IrisTemplate& t, int s) {
  IrisTemplate out = t;
  const int a = t.angular;
  for (int b = 0; b < t.bands; ++b)
    for (int i = 0; i < a; ++i) {
      const int j = ((i + s) % a + a) % a;
      out.valid[size_t(b) * a + i] = t.valid[size_t(b) * a + j];
      for (int k = 0; k < t.bits_per_cell; ++k)
        out.code[(size_t(b) * a + i) * t.bits_per_cell + k] =
            t.code[(size_t(b) * a + j) * t.bits_per_cell + k];
    }
  return out;
}

CircularGridTemplate circular_grid_features(const seg::SquarePatch& patch,
                                            const seg::BinaryMask& mask,
                                            const PithEstimate& pith,
                                            const GridConfig& config) {
  if (cv::countNonZero(mask) == 0)
    throw InvalidInput("circular_grid_features: empty mask");
  if (!inside_mask(mask, pith.position))
    throw InvalidInput("circular_grid_features: pith outside the foreground");
  if (config.bands < 1 || config.cells_per_band < 4 ||
      config.radial_samples_per_band < 2 || config.radial_samples_per_band > 64 ||
      config.angular_samples_per_cell < 1 || config.orientation_bins < 1 ||
      config.frequency_bins < 1 ||
      config.frequency_bins > config.radial_samples_per_band / 2)
    throw InvalidInput("circular_grid_features: bad grid config");

  const int rows = config.bands * config.radial_samples_per_band;
  const int cols = config.cells_per_band * config.angular_samples_per_cell;
  const PolarImage polar =
      unwrap_core(to_gray(patch.pixels), mask, pith.position, rows, cols);

  CircularGridTemplate t;
  t.bands = config.bands;
  t.cells = config.cells_per_band;
  t.descriptor_size = config.orientation_bins * config.frequency_bins;
  t.desc.assign(size_t(t.bands) * t.cells * t.descriptor_size, 0.f);
  t.valid.assign(size_t(t.bands) * t.cells, 0);
  t.config_hash = config.hash();

  const int rs = config.radial_samples_per_band, as = config.angular_samples_per_cell;
  for (int b = 0; b < t.bands; ++b) {
    for (int c = 0; c < t.cells; ++c) {
      int valid_count = 0;
      for (int r = 0; r < rs; ++r)
        for (int a2 = 0; a2 < as; ++a2)
          if (polar.valid(b * rs + r, (c * as + a2) % cols)) ++valid_count;
      if (valid_count * 2 < rs * as) continue;
      t.valid[size_t(b) * t.cells + c] = 1;

      float* d = &t.desc[(size_t(b) * t.cells + c) * t.descriptor_size];
      for (int a2 = 0; a2 < as; ++a2) {
        const int col = c * as + a2;
        // radial profile of this column within the band
        double profile[64];
        for (int r = 0; r < rs; ++r) profile[r] = polar.values(b * rs + r, col);
        // dominant radial frequency of the column: peak DFT magnitude
        int fbin = 0;
        double fbest = -1;
        for (int k = 1; k <= config.frequency_bins; ++k) {
          std::complex<double> acc = 0;
          for (int r = 0; r < rs; ++r) {
            const double ph = -2.0 * kPi * k * r / rs;
            acc += profile[r] * std::complex<double>(std::cos(ph), std::sin(ph));
          }
          if (std::abs(acc) > fbest) {
            fbest = std::abs(acc);
            fbin = k - 1;
          }
        }
        for (int r = 0; r < rs; ++r) {
          const int row = b * rs + r;
          const double drad = polar.values(std::min(row + 1, rows - 1), col) -
                              polar.values(std::max(row - 1, 0), col);
          const double dang = polar.values(row, (col + 1) % cols) -
                              polar.values(row, (col - 1 + cols) % cols);
          const double w = std::hypot(drad, dang);
          if (w < 1e-9) continue;
          double theta = std::atan2(drad, dang);  // relative to the radial axis
          if (theta < 0) theta += kPi;
          if (theta >= kPi) theta -= kPi;
          int obin = std::min(config.orientation_bins - 1,
                              int(theta / kPi * config.orientation_bins));
          d[obin * config.frequency_bins + fbin] += float(w);
        }
      }
      double sum = 0;
      for (int i = 0; i < t.descriptor_size; ++i) sum += d[i];
      if (sum > 0)
        for (int i = 0; i < t.descriptor_size; ++i) d[i] = float(d[i] / sum);
    }
  }
  return t;
}

double circular_grid_compare(const CircularGridTemplate& t1,
                             const CircularGridTemplate& t2) {
  if (t1.bands != t2.bands || t1.cells != t2.cells ||
      t1.descriptor_size != t2.descriptor_size)
    throw IncomparableTemplates("circular_grid_compare: geometry mismatch");
  if (t1.config_hash != t2.config_hash)
    throw IncomparableTemplates("circular_grid_compare: config mismatch");
  double best = -1.0;
  for (int s = 0; s < t1.cells; ++s) {
    double sum = 0;
    long count = 0;
    for (int b = 0; b < t1.bands; ++b) {
      for (int c = 0; c < t1.cells; ++c) {
        const int j = (c + s) % t1.cells;
        if (!t1.is_valid(b, c) || !t2.is_valid(b, j)) continue;
        const float* d1 = t1.cell(b, c);
        const float* d2 = t2.cell(b, j);
        double l1 = 0;
        for (int i = 0; i < t1.descriptor_size; ++i) l1 += std::abs(double(d1[i]) - d2[i]);
        sum += l1;
        ++count;
      }
    }
    if (count == 0) continue;
    const double score = sum / double(count);
    if (best < 0 || score < best) best = score;
  }
  if (best < 0)
    throw IncomparableTemplates("circular_grid_compare: no mutually valid cells");
  return best;
}

CircularGridTemplate shift_template(const CircularGridTemplate& t, int s) {
  CircularGridTemplate out = t;
  for (int b = 0; b < t.bands; ++b)
    for (int c = 0; c < t.cells; ++c) {
      const int j = ((c + s) % t.cells + t.cells) % t.cells;
      out.valid[size_t(b) * t.cells + c] = t.valid[size_t(b) * t.cells + j];
      std::memcpy(&out.desc[(size_t(b) * t.cells + c) * t.descriptor_size],
                  t.cell(b, j), sizeof(float) * t.descriptor_size);
    }
  return out;
}

namespace {

void write_template_file(const std::filesystem::path& path, const nlohmann::json& header,
                         const void* payload, size_t payload_bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write template: " + path.string());
  os.write("LTPL", 4);
  const std::string hs = header.dump();
  const std::uint64_t hlen = hs.size();
  os.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  os.write(hs.data(), std::streamsize(hs.size()));
  os.write(static_cast<const char*>(payload), std::streamsize(payload_bytes));
}

nlohmann::json read_template_header(std::ifstream& is, const std::filesystem::path& path) {
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, "LTPL", 4) != 0)
    throw IoError("bad template magic: " + path.string());
  std::uint64_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  std::string hs(hlen, '\0');
  is.read(hs.data(), std::streamsize(hlen));
  return nlohmann::json::parse(hs);
}

}  // namespace

void save_template(const IrisTemplate& t, const std::filesystem::path& path) {
  nlohmann::json h{{"kind", "iris"},
                   {"bands", t.bands},
                   {"angular", t.angular},
                   {"bits_per_cell", t.bits_per_cell},
                   {"config_hash", t.config_hash}};
  std::vector<std::uint8_t> payload = t.code;
  payload.insert(payload.end(), t.valid.begin(), t.valid.end());
  write_template_file(path, h, payload.data(), payload.size());
}

void save_template(const CircularGridTemplate& t, const std::filesystem::path& path) {
  nlohmann::json h{{"kind", "grid"},
                   {"bands", t.bands},
                   {"cells", t.cells},
                   {"descriptor_size", t.descriptor_size},
                   {"config_hash", t.config_hash}};
  std::vector<char> payload(t.desc.size() * sizeof(float) + t.valid.size());
  std::memcpy(payload.data(), t.desc.data(), t.desc.size() * sizeof(float));
  std::memcpy(payload.data() + t.desc.size() * sizeof(float), t.valid.data(),
              t.valid.size());
  write_template_file(path, h, payload.data(), payload.size());
}

IrisTemplate load_iris_template(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read template: " + path.string());
  const nlohmann::json h = read_template_header(is, path);
  if (h.at("kind") != "iris") throw IoError("not an iris template: " + path.string());
  IrisTemplate t;
  t.bands = h.at("bands").get<int>();
  t.angular = h.at("angular").get<int>();
  t.bits_per_cell = h.at("bits_per_cell").get<int>();
  t.config_hash = h.at("config_hash").get<std::uint64_t>();
  t.code.resize(size_t(t.bands) * t.angular * t.bits_per_cell);
  t.valid.resize(size_t(t.bands) * t.angular);
  is.read(reinterpret_cast<char*>(t.code.data()), std::streamsize(t.code.size()));
  is.read(reinterpret_cast<char*>(t.valid.data()), std::streamsize(t.valid.size()));
  if (!is) throw IoError("truncated template: " + path.string());
  return t;
}

CircularGridTemplate load_grid_template(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read template: " + path.string());
  const nlohmann::json h = read_template_header(is, path);
  if (h.at("kind") != "grid") throw IoError("not a grid template: " + path.string());
  CircularGridTemplate t;
  t.bands = h.at("bands").get<int>();
  t.cells = h.at("cells").get<int>();
  t.descriptor_size = h.at("descriptor_size").get<int>();
  t.config_hash = h.at("config_hash").get<std::uint64_t>();
  t.desc.resize(size_t(t.bands) * t.cells * t.descriptor_size);
  t.valid.resize(size_t(t.bands) * t.cells);
  is.read(reinterpret_cast<char*>(t.desc.data()),
          std::streamsize(t.desc.size() * sizeof(float)));
  is.read(reinterpret_cast<char*>(t.valid.data()), std::streamsize(t.valid.size()));
  if (!is) throw IoError("truncated template: " + path.string());
  return t;
}

}  // namespace logid::baselines
