#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "doctest.h"
#include "tunnelcrack/data.hpp"
#include "tunnelcrack/models/densenet.hpp"
#include "tunnelcrack/weights.hpp"

using namespace tunnelcrack;
using namespace tunnelcrack::data;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("tunnelcrack_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

SampleManifest labelled(std::int64_t background, std::int64_t crack) {
  SampleManifest m;
  for (std::int64_t i = 0; i < background; ++i) {
    m.records.push_back({"bg_" + std::to_string(i) + ".png", Label::background, "", Split::unassigned});
  }
  for (std::int64_t i = 0; i < crack; ++i) {
    m.records.push_back({"cr_" + std::to_string(i) + ".png", Label::crack,
                         "cr_" + std::to_string(i) + "_mask.png", Split::unassigned});
  }
  return m;
}

}  // namespace

TEST_CASE("mid-gray image standardizes to the documented constants") {
  TempDir dir("gray");
  cv::Mat gray(5, 7, CV_8UC3, cv::Scalar(128, 128, 128));
  cv::imwrite((dir.path / "g.png").string(), gray);
  auto t = load_image(dir.path / "g.png", 5, 7);
  CHECK(t.shape() == Shape{1, 3, 5, 7});
  const ImageNorm norm;
  for (std::int64_t c = 0; c < 3; ++c) {
    const double expected = (128.0 / 255.0 - norm.mean[c]) / norm.std[c];
    for (std::int64_t i = 0; i < 35; ++i) {
      CHECK(t.data()[static_cast<std::size_t>(c * 35 + i)] ==
            doctest::Approx(expected).epsilon(1e-12));
    }
  }
  auto resized = load_image(dir.path / "g.png", 224, 224);
  CHECK(resized.shape() == Shape{1, 3, 224, 224});
  CHECK(resized.data()[0] == doctest::Approx((128.0 / 255.0 - 0.485) / 0.229).epsilon(1e-12));
}

TEST_CASE("image channel order is RGB and same-size loads are exact") {
  TempDir dir("rgb");
  cv::Mat img(2, 3, CV_8UC3);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 3; ++x) img.at<cv::Vec3b>(y, x) = cv::Vec3b(10 * x, 20 * y, 255);
  }
  cv::imwrite((dir.path / "c.png").string(), img);
  auto t = load_image_unit(dir.path / "c.png", 2, 3);
  CHECK(t.at({0, 0, 1, 2}) == 1.0);               // red from the last BGR channel
  CHECK(t.at({0, 1, 1, 2}) == 20.0 / 255.0);      // green
  CHECK(t.at({0, 2, 1, 2}) == 20.0 / 255.0);      // blue = 10 * x
  save_rgb(t, dir.path / "back.png");
  auto again = load_image_unit(dir.path / "back.png", 2, 3);
  for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(again.data()[i] == t.data()[i]);
}

TEST_CASE("unreadable images raise IoError") {
  TempDir dir("bad");
  CHECK_THROWS_AS(load_image(dir.path / "missing.png", 4, 4), IoError);
  std::ofstream(dir.path / "junk.png") << "not an image";
  CHECK_THROWS_AS(load_image(dir.path / "junk.png", 4, 4), IoError);
  CHECK_THROWS_AS(load_mask(dir.path / "junk.png", 4, 4), IoError);
}

TEST_CASE("mask loading binarizes and keeps checkers") {
  TempDir dir("mask");
  cv::Mat black(6, 6, CV_8UC1, cv::Scalar(0));
  cv::Mat white(6, 6, CV_8UC1, cv::Scalar(255));
  cv::Mat checker(4, 4, CV_8UC1);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) checker.at<std::uint8_t>(y, x) = (x + y) % 2 ? 255 : 0;
  }
  cv::Mat edge(1, 3, CV_8UC1);
  edge.at<std::uint8_t>(0, 0) = 127;
  edge.at<std::uint8_t>(0, 1) = 128;
  edge.at<std::uint8_t>(0, 2) = 200;
  cv::imwrite((dir.path / "b.png").string(), black);
  cv::imwrite((dir.path / "w.png").string(), white);
  cv::imwrite((dir.path / "c.png").string(), checker);
  cv::imwrite((dir.path / "e.png").string(), edge);

  CHECK(ops::sum(load_mask(dir.path / "b.png", 6, 6)).item() == 0.0);
  CHECK(ops::sum(load_mask(dir.path / "w.png", 3, 9)).item() == 27.0);
  auto c = load_mask(dir.path / "c.png", 4, 4);
  for (std::int64_t y = 0; y < 4; ++y) {
    for (std::int64_t x = 0; x < 4; ++x) CHECK(c.at({y, x}) == ((x + y) % 2 ? 1.0 : 0.0));
  }
  auto e = load_mask(dir.path / "e.png", 1, 3);
  CHECK(e.data()[0] == 0.0);
  CHECK(e.data()[1] == 1.0);
  CHECK(e.data()[2] == 1.0);
  auto twice = binarize_mask(ops::scale(c, 255.0));
  for (std::int64_t i = 0; i < c.numel(); ++i) CHECK(twice.data()[i] == c.data()[i]);

  auto up = load_mask(dir.path / "c.png", 8, 8);
  for (double v : up.data()) CHECK((v == 0.0 || v == 1.0));
  CHECK(up.at({0, 0}) == 0.0);
  CHECK(up.at({0, 2}) == 1.0);
}

TEST_CASE("nearest resize") {
  auto t = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  auto up = nearest_resize(t, 4, 4);
  CHECK(up.at({0, 0}) == 1);
  CHECK(up.at({1, 1}) == 1);
  CHECK(up.at({2, 3}) == 4);
  auto down = nearest_resize(up, 2, 2);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(down.data()[i] == t.data()[i]);
}

TEST_CASE("manifest text round trip") {
  SampleManifest m = labelled(2, 2);
  m.records[0].split = Split::train;
  m.records[3].split = Split::test;
  m.metadata = {{"seed", "42"}, {"dataset", "unit"}};
  const auto text = manifest_to_text(m);
  CHECK(text.find("image_path,label,mask_path,split\n") != std::string::npos);
  CHECK(text.rfind("# seed=42\n", 0) == 0);
  auto back = manifest_from_text(text);
  CHECK(back == m);
  CHECK(manifest_to_text(back) == text);

  TempDir dir("manifest");
  save_manifest(m, dir.path / "sub" / "m.csv");
  auto loaded = load_manifest(dir.path / "sub" / "m.csv");
  CHECK(loaded == m);
  CHECK(loaded.resolve("x.png") == dir.path / "sub" / "x.png");
  CHECK(loaded.resolve("/abs/x.png") == fs::path("/abs/x.png"));

  CHECK_THROWS_AS(manifest_from_text("a,b\n"), ValueError);
  CHECK_THROWS_AS(manifest_from_text("image_path,label,mask_path,split\nx.png,cat,,\n"),
                  ValueError);
  CHECK_THROWS_AS(manifest_from_text("image_path,label,mask_path,split\nx.png,crack\n"),
                  ValueError);
  SampleManifest commas = labelled(1, 0);
  commas.records[0].image_path = "a,b.png";
  CHECK_THROWS_AS(manifest_to_text(commas), ValueError);
  SampleManifest nomask = labelled(0, 1);
  nomask.records[0].mask_path.clear();
  CHECK_THROWS_AS(nomask.require_masks_for_cracks(), ValueError);
}

TEST_CASE("split counts use floor then remainder") {
  CHECK(split_counts(1468, {0.7, 0.2, 0.1}) == SplitCounts{1027, 293, 148});
  CHECK(split_counts(474, {0.7, 0.2, 0.1}) == SplitCounts{331, 94, 49});
  CHECK(split_counts(10, {0.7, 0.2, 0.1}) == SplitCounts{7, 2, 1});
  CHECK(split_counts(0, {0.7, 0.2, 0.1}) == SplitCounts{0, 0, 0});
  CHECK_THROWS_AS(split_counts(10, {0.7, 0.2, 0.2}), ValueError);
  CHECK_THROWS_AS(split_counts(10, {0.8, 0.2, 0.0}), ValueError);
}

TEST_CASE("stratified split partitions per class") {
  auto m = labelled(474, 1468);
  auto s = stratified_split(m);
  CHECK(s.records.size() == m.records.size());
  std::map<std::pair<Label, Split>, int> counts;
  for (std::size_t i = 0; i < s.records.size(); ++i) {
    CHECK(s.records[i].image_path == m.records[i].image_path);
    CHECK(s.records[i].split != Split::unassigned);
    ++counts[{s.records[i].label, s.records[i].split}];
  }
  CHECK(counts[{Label::crack, Split::train}] == 1027);
  CHECK(counts[{Label::crack, Split::val}] == 293);
  CHECK(counts[{Label::crack, Split::test}] == 148);
  CHECK(counts[{Label::background, Split::train}] == 331);
  CHECK(counts[{Label::background, Split::val}] == 94);
  CHECK(counts[{Label::background, Split::test}] == 49);
  CHECK(s.meta("seed") == "42");

  auto again = stratified_split(m);
  CHECK(again == s);
  SplitOptions other;
  other.seed = 7;
  CHECK_FALSE(stratified_split(m, other) == s);

  SplitOptions crack_only;
  crack_only.required_classes = {Label::crack};
  auto ten = stratified_split(labelled(0, 10), crack_only);
  CHECK(ten.select(Split::train).size() == 7);
  CHECK(ten.select(Split::val).size() == 2);
  CHECK(ten.select(Split::test).size() == 1);
  CHECK_THROWS_AS(stratified_split(labelled(0, 10)), ValueError);
  CHECK_THROWS_AS(stratified_split(SampleManifest{}), ValueError);
}

TEST_CASE("weight bundle layout") {
  NamedTensors one{{"w", Tensor::from_data({2, 2}, {1.0, -2.5, 3.25, 1e-300})}};
  auto bytes = encode_bundle(one);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "NWB1");
  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) header_len |= static_cast<std::uint64_t>(bytes[4 + i]) << (8 * i);
  CHECK(bytes.size() - 12 - header_len == 32);
  auto back = decode_bundle(bytes);
  CHECK(back.at("w").shape() == Shape{2, 2});
  for (int i = 0; i < 4; ++i) CHECK(back.at("w").data()[i] == one.at("w").data()[i]);
  CHECK(encode_bundle(back) == bytes);

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_bundle(truncated), IoError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_bundle(bad_magic), IoError);
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_bundle(extra), IoError);

  std::string header(bytes.begin() + 12, bytes.begin() + 12 + static_cast<long>(header_len));
  const auto pos = header.find("\"format_version\":1");
  REQUIRE(pos != std::string::npos);
  auto wrong_version = bytes;
  wrong_version[12 + pos + std::string("\"format_version\":").size()] = '2';
  CHECK_THROWS_AS(decode_bundle(wrong_version), IoError);
}

TEST_CASE("model weights round trip byte-identically") {
  TempDir dir("weights");
  auto config = models::DenseNetConfig::toy();
  auto model = models::build_classifier(config);
  save_weights(model, dir.path / "a.nwb");

  config.seed = 99;
  auto other = models::build_classifier(config);
  load_weights(other, dir.path / "a.nwb");
  save_weights(other, dir.path / "b.nwb");
  CHECK(file_bytes(dir.path / "a.nwb") == file_bytes(dir.path / "b.nwb"));

  Rng rng(1);
  auto image = randn({1, 3, 32, 32}, rng);
  auto x = model.forward(image);
  auto y = other.forward(image);
  CHECK(x.data()[0] == y.data()[0]);
  CHECK(x.data()[1] == y.data()[1]);

  auto big = models::DenseNetConfig::toy();
  big.growth_rate = 6;
  auto mismatched = models::build_classifier(big);
  CHECK_THROWS_AS(load_weights(mismatched, dir.path / "a.nwb"), ShapeError);
}

TEST_CASE("synthetic corpus") {
  TempDir a("synth_a");
  TempDir b("synth_b");
  SynthOptions o;
  o.crack_images = 3;
  o.background_images = 2;
  o.height = 32;
  o.width = 40;
  auto m = synth_dataset(a.path, o);
  synth_dataset(b.path, o);
  CHECK(m.records.size() == 5);
  for (const auto& r : m.records) {
    auto mask = load_mask(m.resolve(r.mask_path), 32, 40);
    const double area = ops::sum(mask).item();
    if (r.label == Label::crack) {
      CHECK(area > 0.0);
    } else {
      CHECK(area == 0.0);
    }
    CHECK(load_image(m.resolve(r.image_path), 32, 40).shape() == Shape{1, 3, 32, 40});
    CHECK(file_bytes(a.path / r.image_path) == file_bytes(b.path / r.image_path));
    CHECK(file_bytes(a.path / r.mask_path) == file_bytes(b.path / r.mask_path));
  }
  CHECK(file_bytes(a.path / "manifest.csv") == file_bytes(b.path / "manifest.csv"));
  auto loaded = load_manifest(a.path / "manifest.csv");
  CHECK(loaded == m);
  CHECK(loaded.meta("seed") == "42");

  // Crack pixels are dark, background near the standardization mean.
  const auto& crack = m.records.front();
  auto img = load_image_unit(m.resolve(crack.image_path), 32, 40);
  auto mask = load_mask(m.resolve(crack.mask_path), 32, 40);
  for (std::int64_t i = 0; i < 32 * 40; ++i) {
    if (mask.data()[i] == 1.0) CHECK(img.data()[i] < 0.25);
  }

  o.crack_images = 1;
  o.background_images = 0;
  CHECK_THROWS_AS(synth_dataset(a.path / "x", o), ValueError);
}
