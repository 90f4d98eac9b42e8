#include "logid/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <json.hpp>

namespace logid::synthgen {

namespace {

constexpr double kPi = std::numbers::pi;
// Upper bound on the relative boundary perturbation at shape_irregularity=1.
constexpr double kBoundaryAmp = 0.16;
// Ditto for the angular wobble of the ring pattern.
constexpr double kRingWobbleAmp = 0.08;

double unit_hash(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return double(splitmix64(seed_combine(seed, a, b)) >> 11) * 0x1.0p-53;
}

// Low-frequency angular perturbation: sum of a few cosine harmonics with
// seeded amplitudes and phases, normalized to a total amplitude of `amp`.
struct AngularWobble {
  std::array<double, 4> a{};    // harmonics k = 2..5
  std::array<double, 4> phi{};

  static AngularWobble make(Rng& rng, double amp) {
    AngularWobble w;
    double total = 0;
    for (int i = 0; i < 4; ++i) {
      w.a[i] = rng.uniform(0.2, 1.0);
      w.phi[i] = rng.uniform(0.0, 2 * kPi);
      total += w.a[i];
    }
    for (int i = 0; i < 4; ++i) w.a[i] *= (total > 0 ? amp / total : 0.0);
    return w;
  }

  double eval(double theta) const {
    double s = 0;
    for (int i = 0; i < 4; ++i) s += a[i] * std::cos((i + 2) * theta + phi[i]);
    return s;
  }
};

struct StyleBase {
  cv::Vec3d color;  // BGR
  double noise_sigma;
};

StyleBase background_base(BackgroundStyle s) {
  switch (s) {
    case BackgroundStyle::forest: return {{52.0, 92.0, 68.0}, 9.0};
    case BackgroundStyle::sawmill: return {{118.0, 118.0, 124.0}, 6.0};
    case BackgroundStyle::studio: return {{38.0, 36.0, 34.0}, 3.0};
  }
  return {{38.0, 36.0, 34.0}, 3.0};
}

inline std::uint8_t clamp_u8(double v, double lo = 0.0, double hi = 255.0) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, lo, hi)));
}

cv::Mat affine_about_center(double center, double angle_deg, cv::Point2d translation) {
  // Project-wide handedness: angles counterclockwise-positive with the image
  // y axis pointing down. (x,y) -> (x cos - y sin, x sin + y cos) about the
  // pixel-grid center, then translated.
  const double th = angle_deg * kPi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  cv::Mat m(2, 3, CV_64F);
  m.at<double>(0, 0) = c;
  m.at<double>(0, 1) = -s;
  m.at<double>(0, 2) = center - center * c + center * s + translation.x;
  m.at<double>(1, 0) = s;
  m.at<double>(1, 1) = c;
  m.at<double>(1, 2) = center - center * s - center * c + translation.y;
  return m;
}

cv::Point2d apply_affine(const cv::Mat& m, cv::Point2d p) {
  return {m.at<double>(0, 0) * p.x + m.at<double>(0, 1) * p.y + m.at<double>(0, 2),
          m.at<double>(1, 0) * p.x + m.at<double>(1, 1) * p.y + m.at<double>(1, 2)};
}

cv::Mat1b largest_component(const cv::Mat1b& mask) {
  cv::Mat labels, stats, centroids;
  int n = cv::connectedComponentsWithStats(mask, labels, stats, centroids, 8, CV_32S);
  if (n <= 1) return mask.clone();
  int best = 1;
  for (int i = 2; i < n; ++i) {
    if (stats.at<int>(i, cv::CC_STAT_AREA) > stats.at<int>(best, cv::CC_STAT_AREA))
      best = i;
  }
  cv::Mat1b out(mask.size(), std::uint8_t(0));
  for (int y = 0; y < mask.rows; ++y)
    for (int x = 0; x < mask.cols; ++x)
      if (labels.at<int>(y, x) == best) out(y, x) = 1;
  return out;
}

}  // namespace

std::string to_string(BackgroundStyle s) {
  switch (s) {
    case BackgroundStyle::forest: return "forest";
    case BackgroundStyle::sawmill: return "sawmill";
    case BackgroundStyle::studio: return "studio";
  }
  return "studio";
}

void validate(const LogSpec& spec) {
  if (spec.ring_count < 3) throw InvalidInput("LogSpec: ring_count must be >= 3");
  if (static_cast<int>(spec.ring_width_profile.size()) != spec.ring_count)
    throw InvalidInput("LogSpec: ring_count != ring_width_profile length");
  if (!(spec.cs_radius > 0)) throw InvalidInput("LogSpec: cs_radius must be positive");
  double total = 0;
  for (double w : spec.ring_width_profile) {
    if (!(w > 0) || !std::isfinite(w))
      throw InvalidInput("LogSpec: ring widths must be positive");
    total += w;
  }
  if (total > spec.cs_radius)
    throw InvalidInput("LogSpec: sum of ring widths exceeds cs_radius");
  if (spec.shape_irregularity < 0 || spec.shape_irregularity > 1)
    throw InvalidInput("LogSpec: shape_irregularity outside [0,1]");
  // Keeps the pith well inside the worst-case distorted boundary.
  if (std::hypot(spec.pith_offset.x, spec.pith_offset.y) > 0.5 * spec.cs_radius)
    throw InvalidInput("LogSpec: pith_offset too large for cs_radius");
}

void validate(const AcquisitionSpec& acq) {
  if (!std::isfinite(acq.rotation_deg) || acq.rotation_deg < 0 || acq.rotation_deg >= 360)
    throw InvalidInput("AcquisitionSpec: rotation_deg outside [0,360)");
  if (!std::isfinite(acq.translation.x) || !std::isfinite(acq.translation.y))
    throw InvalidInput("AcquisitionSpec: translation not finite");
  if (acq.illumination_gain < 0.5 || acq.illumination_gain > 2.0)
    throw InvalidInput("AcquisitionSpec: illumination_gain outside [0.5,2]");
  if (acq.sawcut_noise < 0 || acq.sawcut_noise > 1)
    throw InvalidInput("AcquisitionSpec: sawcut_noise outside [0,1]");
}

std::pair<cv::Mat3b, GroundTruth> generate_end(const LogSpec& spec,
                                               const AcquisitionSpec& acq,
                                               int image_size,
                                               std::uint64_t seed) {
  validate(spec);
  validate(acq);
  if (image_size < 2 * spec.cs_radius + 20)
    throw InvalidInput("generate_end: image_size < 2*cs_radius + 20");

  const int sz = image_size;
  const double center = (sz - 1) / 2.0;
  const cv::Point2d cs_center(center, center);
  const cv::Point2d pith = cs_center + spec.pith_offset;

  Rng texture_rng(seed_combine(spec.texture_seed, 0xA11CE));
  const AngularWobble boundary =
      AngularWobble::make(texture_rng, kBoundaryAmp * spec.shape_irregularity);
  const AngularWobble ring_wobble =
      AngularWobble::make(texture_rng, kRingWobbleAmp * spec.shape_irregularity);

  // Base wood tone; identity-bearing together with the ring profile.
  const cv::Vec3d wood_base(90.0 + 35.0 * unit_hash(spec.texture_seed, 1),
                            135.0 + 35.0 * unit_hash(spec.texture_seed, 2),
                            175.0 + 35.0 * unit_hash(spec.texture_seed, 3));

  std::vector<double> cum(spec.ring_width_profile.size() + 1, 0.0);
  for (size_t i = 0; i < spec.ring_width_profile.size(); ++i)
    cum[i + 1] = cum[i] + spec.ring_width_profile[i];
  const double mean_width = cum.back() / spec.ring_count;

  Rng acq_rng(seed_combine(seed, 0xBEEF));
  const StyleBase bg = background_base(acq.background_style);
  const double saw_dir = acq_rng.uniform(0.0, kPi);
  const double saw_wavelength = acq_rng.uniform(5.0, 10.0);
  const double saw_phase = acq_rng.uniform(0.0, 2 * kPi);
  const double saw_amp = 16.0 * acq.sawcut_noise;
  const double saw_cos = std::cos(saw_dir), saw_sin = std::sin(saw_dir);
  const std::uint64_t noise_seed = seed_combine(seed, 0xD00D);

  cv::Mat3b canon(sz, sz);
  cv::Mat1b canon_mask(sz, sz, std::uint8_t(0));

  for (int y = 0; y < sz; ++y) {
    for (int x = 0; x < sz; ++x) {
      const double dxc = x - cs_center.x, dyc = y - cs_center.y;
      const double rc = std::hypot(dxc, dyc);
      const double phic = std::atan2(dyc, dxc);
      const double boundary_r = spec.cs_radius * (1.0 + boundary.eval(phic));
      cv::Vec3d col;
      if (rc <= boundary_r) {
        canon_mask(y, x) = 1;
        const double dxp = x - pith.x, dyp = y - pith.y;
        const double rp = std::hypot(dxp, dyp);
        const double phip = std::atan2(dyp, dxp);
        const double r_eff = rp * (1.0 + ring_wobble.eval(phip));

        // Ring index and within-ring position; beyond the profiled rings the
        // pattern continues with the mean width.
        int ring;
        double frac;
        if (r_eff < cum.back()) {
          ring = int(std::upper_bound(cum.begin(), cum.end(), r_eff) - cum.begin()) - 1;
          ring = std::clamp(ring, 0, spec.ring_count - 1);
          const double w = cum[ring + 1] - cum[ring];
          frac = (r_eff - cum[ring]) / w;
        } else {
          const double over = r_eff - cum.back();
          ring = spec.ring_count + int(over / mean_width);
          frac = std::fmod(over, mean_width) / mean_width;
        }
        frac = std::clamp(frac, 0.0, 1.0);

        const double depth = 0.25 + 0.35 * unit_hash(spec.texture_seed, 10, ring);
        const double bright = 0.92 + 0.16 * unit_hash(spec.texture_seed, 11, ring);
        const double latewood = std::exp(-0.5 * std::pow((frac - 0.85) / 0.07, 2.0));
        const double shade = bright * (1.0 - 0.12 * frac) * (1.0 - depth * latewood);
        for (int ch = 0; ch < 3; ++ch) {
          const double tint = 0.95 + 0.10 * unit_hash(spec.texture_seed, 20 + ch, ring);
          col[ch] = wood_base[ch] * shade * tint;
        }
        const double u = x * saw_cos + y * saw_sin;
        const double saw = saw_amp * std::sin(2 * kPi * u / saw_wavelength + saw_phase);
        const double grain =
            10.0 * (unit_hash(noise_seed, std::uint64_t(y) * sz + x) - 0.5);
        for (int ch = 0; ch < 3; ++ch) {
          double v = (col[ch] + saw + grain) * acq.illumination_gain;
          // CS pixels never drop to pure black: downstream stages derive the
          // foreground of a patch from nonzero pixels.
          canon(y, x)[ch] = clamp_u8(v, 8.0, 255.0);
        }
        continue;
      }
      const double n =
          bg.noise_sigma * 2.0 * (unit_hash(noise_seed, 0x8000000000ULL + std::uint64_t(y) * sz + x) - 0.5);
      for (int ch = 0; ch < 3; ++ch)
        canon(y, x)[ch] = clamp_u8((bg.color[ch] + n) * acq.illumination_gain);
    }
  }

  cv::Mat m = affine_about_center(center, acq.rotation_deg, acq.translation);
  cv::Mat3b image;
  cv::warpAffine(canon, image, m, canon.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
  cv::Mat1b mask;
  cv::warpAffine(canon_mask, mask, m, canon_mask.size(), cv::INTER_NEAREST,
                 cv::BORDER_CONSTANT, cv::Scalar(0));
  mask = largest_component(mask);

  GroundTruth gt;
  gt.mask = mask;
  gt.pith = apply_affine(m, pith);
  gt.class_label = ClassLabel{spec.log_id, spec.end};

  const int px = int(std::lround(gt.pith.x)), py = int(std::lround(gt.pith.y));
  if (px < 0 || py < 0 || px >= sz || py >= sz || mask(py, px) == 0)
    throw std::logic_error("generate_end: pith fell outside the rendered mask");
  return {image, gt};
}

DatasetProfile profile_for_tag(const std::string& tag) {
  std::string t = tag;
  std::transform(t.begin(), t.end(), t.begin(), ::toupper);
  if (t.rfind("HLDB_", 0) == 0) t = t.substr(5);
  if (t == "FH" || t == "FL" || t == "FOREST")
    return {BackgroundStyle::forest, 0.7, 1.3, 0.5, 0.9};
  if (t == "SM" || t == "SAWMILL")
    return {BackgroundStyle::sawmill, 0.8, 1.25, 0.3, 0.7};
  if (t == "R") return {BackgroundStyle::studio, 0.95, 1.1, 0.2, 0.4};
  if (t == "S") return {BackgroundStyle::studio, 0.95, 1.1, 0.0, 0.15};
  return {};
}

LogSpec random_log_spec(const std::string& log_id, int image_size, Rng& rng) {
  LogSpec spec;
  spec.log_id = log_id;
  spec.cs_radius = rng.uniform(0.28, 0.36) * image_size;
  spec.ring_count = rng.uniform_int(10, 18);
  spec.ring_width_profile.resize(spec.ring_count);
  double total = 0;
  for (double& w : spec.ring_width_profile) {
    w = rng.uniform(0.5, 1.6);
    total += w;
  }
  // Profiled rings cover most of the radius; the rest extends periodically.
  const double target = 0.88 * spec.cs_radius;
  for (double& w : spec.ring_width_profile) w *= target / total;
  const double off_r = rng.uniform(0.0, 0.15) * spec.cs_radius;
  const double off_a = rng.uniform(0.0, 2 * kPi);
  spec.pith_offset = {off_r * std::cos(off_a), off_r * std::sin(off_a)};
  spec.shape_irregularity = rng.uniform(0.05, 0.4);
  spec.texture_seed = rng.next_u64();
  return spec;
}

DatasetManifest generate_dataset(const GeneratorConfig& cfg,
                                 const std::filesystem::path& root) {
  if (cfg.n_logs < 8) throw InvalidInput("generate_dataset: n_logs must be >= 8");
  if (cfg.acquisitions_per_end < 1)
    throw InvalidInput("generate_dataset: acquisitions_per_end must be >= 1");
  const DatasetProfile profile = profile_for_tag(cfg.dataset_tag);
  const std::filesystem::path base = root / cfg.dataset_tag;

  DatasetManifest manifest;
  manifest.dataset_tag = cfg.dataset_tag;
  manifest.seed = cfg.seed;
  manifest.image_size = cfg.image_size;
  manifest.root = base;

  std::error_code ec;
  std::filesystem::create_directories(base, ec);
  if (ec) throw IoError("cannot create dataset directory: " + base.string());

  for (int li = 0; li < cfg.n_logs; ++li) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "L%03d", li);
    const std::string log_id = buf;
    for (int ei = 0; ei < 2; ++ei) {
      const EndSide end = ei == 0 ? EndSide::top : EndSide::bottom;
      Rng spec_rng(seed_combine(cfg.seed, li, ei));
      LogSpec spec = random_log_spec(log_id, cfg.image_size, spec_rng);
      spec.end = end;
      for (int ai = 0; ai < cfg.acquisitions_per_end; ++ai) {
        Rng acq_rng(seed_combine(cfg.seed, li, ei, 1000 + ai));
        AcquisitionSpec acq;
        acq.rotation_deg = acq_rng.uniform(0.0, 360.0);
        acq.translation = {acq_rng.uniform(-6.0, 6.0), acq_rng.uniform(-6.0, 6.0)};
        acq.background_style = profile.background;
        acq.illumination_gain = acq_rng.uniform(profile.gain_lo, profile.gain_hi);
        acq.sawcut_noise = acq_rng.uniform(profile.sawcut_lo, profile.sawcut_hi);

        auto [image, gt] =
            generate_end(spec, acq, cfg.image_size, seed_combine(cfg.seed, li, ei, 5000 + ai));

        const std::filesystem::path dir = base / log_id / to_string(end);
        std::filesystem::create_directories(dir, ec);
        if (ec) throw IoError("cannot create directory: " + dir.string());

        const std::string stem = std::to_string(ai);
        if (!cv::imwrite((dir / (stem + ".png")).string(), image))
          throw IoError("cannot write image under " + dir.string());
        if (!cv::imwrite((dir / (stem + ".mask.png")).string(), gt.mask * 255))
          throw IoError("cannot write mask under " + dir.string());
        {
          nlohmann::json pj{{"x", gt.pith.x}, {"y", gt.pith.y}};
          std::ofstream os(dir / (stem + ".pith.json"));
          if (!os) throw IoError("cannot write pith sidecar under " + dir.string());
          os << pj.dump() << "\n";
        }

        ManifestEntry entry;
        entry.id = {log_id, end, ai, cfg.dataset_tag};
        const std::string rel = log_id + "/" + to_string(end) + "/" + stem;
        entry.image_path = rel + ".png";
        entry.mask_path = rel + ".mask.png";
        entry.pith_path = rel + ".pith.json";
        manifest.entries.push_back(std::move(entry));
      }
    }
  }
  save_manifest(manifest, base / "manifest.json");
  return manifest;
}

}  // namespace logid::synthgen
