#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "tunnelcrack/data.hpp"
#include "tunnelcrack/ops.hpp"

namespace tunnelcrack::data {

namespace {

void check_target(std::int64_t h, std::int64_t w) {
  if (h < 1 || w < 1) throw ValueError("target size must be positive");
}

cv::Mat read_raster(const std::filesystem::path& path, int flags) {
  if (!std::filesystem::exists(path)) throw IoError("image not found: " + path.string());
  cv::Mat m;
  try {
    m = cv::imread(path.string(), flags);
  } catch (const cv::Exception& e) {
    throw IoError("cannot decode " + path.string() + ": " + e.what());
  }
  if (m.empty()) throw IoError("cannot decode " + path.string());
  return m;
}

void write_raster(const cv::Mat& m, const std::filesystem::path& path) {
  bool ok = false;
  try {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    ok = cv::imwrite(path.string(), m);
  } catch (const std::exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

std::uint8_t to_byte(double unit) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(unit, 0.0, 1.0) * 255.0));
}

// Accepts H x W, 1 x H x W or 1 x 1 x H x W.
std::pair<std::int64_t, std::int64_t> plane_size(const Tensor& t, const char* what) {
  const auto& s = t.shape();
  if (s.size() == 2) return {s[0], s[1]};
  if (s.size() == 3 && s[0] == 1) return {s[1], s[2]};
  if (s.size() == 4 && s[0] == 1 && s[1] == 1) return {s[2], s[3]};
  throw ShapeError(std::string(what) + " expects a single plane, got " + to_string(s));
}

}  // namespace

Tensor load_image_unit(const std::filesystem::path& path, std::int64_t target_h,
                       std::int64_t target_w) {
  check_target(target_h, target_w);
  const cv::Mat bgr = read_raster(path, cv::IMREAD_COLOR);
  const std::int64_t h = bgr.rows;
  const std::int64_t w = bgr.cols;
  std::vector<double> values(static_cast<std::size_t>(3 * h * w));
  for (std::int64_t y = 0; y < h; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
    for (std::int64_t x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        values[static_cast<std::size_t>((c * h + y) * w + x)] = row[x][2 - c] / 255.0;
      }
    }
  }
  Tensor img = Tensor::from_data({1, 3, h, w}, std::move(values));
  if (h == target_h && w == target_w) return img;
  NoGradGuard guard;
  return ops::bilinear_resize(img, target_h, target_w).detach();
}

Tensor standardize(const Tensor& unit_rgb, const ImageNorm& norm) {
  if (unit_rgb.rank() != 4 || unit_rgb.dim(1) != 3) {
    throw ShapeError("standardize expects B x 3 x H x W");
  }
  std::vector<double> out(unit_rgb.data().begin(), unit_rgb.data().end());
  const std::int64_t hw = unit_rgb.dim(2) * unit_rgb.dim(3);
  for (std::int64_t b = 0; b < unit_rgb.dim(0); ++b) {
    for (std::int64_t c = 0; c < 3; ++c) {
      if (!(norm.std[c] > 0.0)) throw ValueError("standardization std must be positive");
      double* p = out.data() + (b * 3 + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) p[i] = (p[i] - norm.mean[c]) / norm.std[c];
    }
  }
  return Tensor::from_data(unit_rgb.shape(), std::move(out));
}

Tensor load_image(const std::filesystem::path& path, std::int64_t target_h,
                  std::int64_t target_w, const ImageNorm& norm) {
  return standardize(load_image_unit(path, target_h, target_w), norm);
}

Tensor nearest_resize(const Tensor& plane, std::int64_t out_h, std::int64_t out_w) {
  check_target(out_h, out_w);
  const auto [h, w] = plane_size(plane, "nearest_resize");
  const auto src = plane.data();
  std::vector<double> out(static_cast<std::size_t>(out_h * out_w));
  for (std::int64_t y = 0; y < out_h; ++y) {
    const std::int64_t sy = std::min(h - 1, (2 * y + 1) * h / (2 * out_h));
    for (std::int64_t x = 0; x < out_w; ++x) {
      const std::int64_t sx = std::min(w - 1, (2 * x + 1) * w / (2 * out_w));
      out[static_cast<std::size_t>(y * out_w + x)] = src[static_cast<std::size_t>(sy * w + sx)];
    }
  }
  return Tensor::from_data({out_h, out_w}, std::move(out));
}

Tensor binarize_mask(const Tensor& gray) {
  std::vector<double> out(gray.data().begin(), gray.data().end());
  for (auto& v : out) v = v >= 128.0 ? 1.0 : 0.0;
  return Tensor::from_data(gray.shape(), std::move(out));
}

Tensor load_mask(const std::filesystem::path& path, std::int64_t target_h,
                 std::int64_t target_w) {
  check_target(target_h, target_w);
  const cv::Mat gray = read_raster(path, cv::IMREAD_GRAYSCALE);
  const std::int64_t h = gray.rows;
  const std::int64_t w = gray.cols;
  std::vector<double> values(static_cast<std::size_t>(h * w));
  for (std::int64_t y = 0; y < h; ++y) {
    const auto* row = gray.ptr<std::uint8_t>(static_cast<int>(y));
    for (std::int64_t x = 0; x < w; ++x) values[static_cast<std::size_t>(y * w + x)] = row[x];
  }
  Tensor plane = Tensor::from_data({h, w}, std::move(values));
  if (h != target_h || w != target_w) plane = nearest_resize(plane, target_h, target_w);
  return binarize_mask(plane);
}

void save_mask(const Tensor& mask, const std::filesystem::path& path) {
  const auto [h, w] = plane_size(mask, "save_mask");
  cv::Mat m(static_cast<int>(h), static_cast<int>(w), CV_8UC1);
  const auto v = mask.data();
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      m.at<std::uint8_t>(static_cast<int>(y), static_cast<int>(x)) =
          v[static_cast<std::size_t>(y * w + x)] > 0.5 ? 255 : 0;
    }
  }
  write_raster(m, path);
}

void save_grayscale(const Tensor& unit, const std::filesystem::path& path) {
  const auto [h, w] = plane_size(unit, "save_grayscale");
  cv::Mat m(static_cast<int>(h), static_cast<int>(w), CV_8UC1);
  const auto v = unit.data();
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      m.at<std::uint8_t>(static_cast<int>(y), static_cast<int>(x)) =
          to_byte(v[static_cast<std::size_t>(y * w + x)]);
    }
  }
  write_raster(m, path);
}

void save_rgb(const Tensor& unit_rgb, const std::filesystem::path& path) {
  const auto& s = unit_rgb.shape();
  const bool batched = s.size() == 4 && s[0] == 1 && s[1] == 3;
  if (!batched && !(s.size() == 3 && s[0] == 3)) {
    throw ShapeError("save_rgb expects 3 x H x W or 1 x 3 x H x W, got " + to_string(s));
  }
  const std::int64_t h = s[s.size() - 2];
  const std::int64_t w = s[s.size() - 1];
  cv::Mat m(static_cast<int>(h), static_cast<int>(w), CV_8UC3);
  const auto v = unit_rgb.data();
  for (std::int64_t y = 0; y < h; ++y) {
    auto* row = m.ptr<cv::Vec3b>(static_cast<int>(y));
    for (std::int64_t x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        row[x][2 - c] = to_byte(v[static_cast<std::size_t>((c * h + y) * w + x)]);
      }
    }
  }
  write_raster(m, path);
}

}  // namespace tunnelcrack::data
