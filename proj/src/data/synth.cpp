#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "tunnelcrack/data.hpp"
#include "tunnelcrack/random.hpp"

namespace tunnelcrack::data {

namespace {

struct Point {
  double x;
  double y;
};

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx);
  const double ey = p.y - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

// Unit-range RGB planes: mean-gray base, a few low-frequency waves, pixel noise.
std::vector<double> texture(Rng& rng, std::int64_t h, std::int64_t w, const ImageNorm& norm) {
  std::vector<double> rgb(static_cast<std::size_t>(3 * h * w));
  const double tone = rng.uniform(-0.04, 0.04);
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 3; ++i) {
    waves.push_back({rng.uniform(0.02, 0.12), rng.uniform(0.02, 0.12),
                     rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(0.01, 0.035)});
  }
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      double shade = tone;
      for (const auto& wv : waves) {
        shade += wv.amp * std::sin(wv.fx * static_cast<double>(x) +
                                   wv.fy * static_cast<double>(y) + wv.phase);
      }
      const double grain = rng.uniform(-0.025, 0.025);
      for (std::int64_t c = 0; c < 3; ++c) {
        rgb[static_cast<std::size_t>((c * h + y) * w + x)] =
            std::clamp(norm.mean[c] + shade + grain, 0.0, 1.0);
      }
    }
  }
  return rgb;
}

std::vector<Point> polyline(Rng& rng, std::int64_t h, std::int64_t w, const SynthOptions& o) {
  const double W = static_cast<double>(w);
  const double H = static_cast<double>(h);
  const auto clamp_point = [&](Point p) {
    return Point{std::clamp(p.x, 1.0, W - 1.0), std::clamp(p.y, 1.0, H - 1.0)};
  };
  std::vector<Point> pts{{rng.uniform(0.15 * W, 0.85 * W), rng.uniform(0.15 * H, 0.85 * H)}};
  double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const auto segments = o.min_segments +
                        static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(
                            o.max_segments - o.min_segments + 1)));
  const double span = std::min(W, H);
  for (std::int64_t s = 0; s < segments; ++s) {
    angle += rng.uniform(-0.7, 0.7);
    const double len = rng.uniform(0.2, 0.4) * span;
    pts.push_back(clamp_point({pts.back().x + len * std::cos(angle),
                               pts.back().y + len * std::sin(angle)}));
  }
  return pts;
}

std::vector<double> crack_mask(const std::vector<Point>& pts, double width, std::int64_t h,
                               std::int64_t w) {
  std::vector<double> mask(static_cast<std::size_t>(h * w), 0.0);
  const double half = width / 2.0;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const Point c{static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5};
      for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
        if (segment_distance(c, pts[s], pts[s + 1]) <= half) {
          mask[static_cast<std::size_t>(y * w + x)] = 1.0;
          break;
        }
      }
    }
  }
  return mask;
}

std::string indexed(const char* stem, std::int64_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03lld.png", stem, static_cast<long long>(i));
  return buf;
}

}  // namespace

SampleManifest synth_dataset(const std::filesystem::path& dir, const SynthOptions& o) {
  if (o.crack_images < 0 || o.background_images < 0 ||
      o.crack_images + o.background_images < 2) {
    throw ValueError("synth_dataset needs at least two images");
  }
  if (o.height < 8 || o.width < 8) throw ValueError("synthetic images must be at least 8x8");
  if (!(o.min_crack_width > 0.0 && o.max_crack_width >= o.min_crack_width)) {
    throw ValueError("invalid crack width range");
  }
  if (o.min_segments < 1 || o.max_segments < o.min_segments) {
    throw ValueError("invalid crack segment range");
  }
  try {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "masks");
  } catch (const std::filesystem::filesystem_error& e) {
    throw IoError(std::string("cannot create synthetic dataset directory: ") + e.what());
  }

  const ImageNorm norm;
  Rng rng(o.seed);
  SampleManifest manifest;
  manifest.base_dir = dir;
  manifest.metadata = {{"dataset", "synthetic"},
                       {"seed", std::to_string(o.seed)},
                       {"height", std::to_string(o.height)},
                       {"width", std::to_string(o.width)}};

  const std::int64_t h = o.height;
  const std::int64_t w = o.width;
  const auto emit = [&](Label label, std::int64_t index) {
    std::vector<double> rgb = texture(rng, h, w, norm);
    std::vector<double> mask(static_cast<std::size_t>(h * w), 0.0);
    if (label == Label::crack) {
      do {
        const auto pts = polyline(rng, h, w, o);
        mask = crack_mask(pts, rng.uniform(o.min_crack_width, o.max_crack_width), h, w);
      } while (std::none_of(mask.begin(), mask.end(), [](double v) { return v > 0.0; }));
      const double dark = rng.uniform(0.10, 0.20);
      for (std::int64_t i = 0; i < h * w; ++i) {
        if (mask[static_cast<std::size_t>(i)] == 0.0) continue;
        const double v = std::clamp(dark + rng.uniform(-0.02, 0.02), 0.0, 1.0);
        for (std::int64_t c = 0; c < 3; ++c) rgb[static_cast<std::size_t>(c * h * w + i)] = v;
      }
    }
    const char* stem = label == Label::crack ? "crack" : "background";
    SampleRecord r;
    r.image_path = "images/" + indexed(stem, index);
    r.mask_path = "masks/" + indexed(stem, index);
    r.label = label;
    save_rgb(Tensor::from_data({3, h, w}, std::move(rgb)), dir / r.image_path);
    save_mask(Tensor::from_data({h, w}, std::move(mask)), dir / r.mask_path);
    manifest.records.push_back(std::move(r));
  };

  const std::int64_t n = std::max(o.crack_images, o.background_images);
  for (std::int64_t i = 0; i < n; ++i) {
    if (i < o.crack_images) emit(Label::crack, i);
    if (i < o.background_images) emit(Label::background, i);
  }
  save_manifest(manifest, dir / "manifest.csv");
  return manifest;
}

}  // namespace tunnelcrack::data
