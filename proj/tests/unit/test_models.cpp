#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "support/oracles.hpp"
#include "tunnelcrack/models/model_config.hpp"

using namespace tunnelcrack;
using namespace tunnelcrack::models;

namespace {

Tensor random_image(std::int64_t c, std::int64_t h, std::int64_t w, std::uint64_t seed) {
  Rng rng(seed);
  return randn({1, c, h, w}, rng);
}

DenseNetConfig micro_classifier() {
  DenseNetConfig c = DenseNetConfig::toy();
  c.block_sizes = {1, 1, 1, 1};
  return c;
}

SegmenterConfig micro_segmenter() {
  SegmenterConfig c = SegmenterConfig::toy();
  c.input_height = c.input_width = 16;
  c.block_sizes = {1, 1, 1, 1};
  c.aspp_channels = 4;
  c.decoder_channels = 4;
  c.low_level_channels = 4;
  return c;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    if (a.data()[i] != b.data()[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("dense block channel arithmetic") {
  CHECK(build_dense_block(64, 6, 32).out_channels == 256);
  auto small = build_dense_block(8, 2, 4, {"b", kInputNode, 4, 1});
  CHECK(small.out_channels == 16);
  CHECK(small.layers.size() > 0);

  ModelGraph g(ModelMetadata{ModelTask::classification, 8, 8, 8, 2, {}});
  Rng rng(1);
  g.append(small, rng);
  CHECK(g.layer("b.layer2.bn1").in_channels == 12);
  CHECK(g.layer("b.layer1.bn1").in_channels == 8);
  auto shapes = g.infer_shapes({2, 8, 8, 8});
  CHECK(shapes.at("b.out") == Shape{2, 16, 8, 8});

  for (std::int64_t in : {1, 3, 8}) {
    for (std::int64_t layers : {0, 1, 3}) {
      for (std::int64_t growth : {1, 4, 5}) {
        auto block = build_dense_block(in, layers, growth);
        CHECK(block.out_channels == in + layers * growth);
        ModelGraph m(ModelMetadata{ModelTask::classification, in, 5, 5, 2, {}});
        Rng r(3);
        m.append(block, r);
        if (layers > 0) {
          CHECK(m.infer_shapes({1, in, 5, 5}).at(block.output)[1] == in + layers * growth);
        }
      }
    }
  }
}

TEST_CASE("empty dense block is the identity") {
  auto block = build_dense_block(7, 0, 4);
  CHECK(block.out_channels == 7);
  CHECK(block.output == kInputNode);
  CHECK(block.layers.empty());
}

TEST_CASE("transition compression and pooling") {
  CHECK(transition_channels(256, 0.5) == 128);
  CHECK(transition_channels(255, 0.5) == 127);
  CHECK(transition_channels(37, 1.0) == 37);
  CHECK_THROWS_AS(transition_channels(8, 0.0), ValueError);
  CHECK_THROWS_AS(transition_channels(8, 1.5), ValueError);

  for (std::int64_t h : {4, 5, 7, 8}) {
    auto t = build_transition(16, 0.5, {"t", kInputNode, true});
    ModelGraph g(ModelMetadata{ModelTask::classification, 16, h, h, 2, {}});
    Rng rng(2);
    g.append(t, rng);
    CHECK(g.infer_shapes({1, 16, h, h}).at(t.output) == Shape{1, 8, h / 2, h / 2});
    CHECK(g.forward(random_image(16, h, h, 5)).shape() == Shape{1, 8, h / 2, h / 2});
  }
}

TEST_CASE("classifier shape trace at full size") {
  const auto config = DenseNetConfig::densenet169();
  auto model = build_classifier(config);
  auto shapes = model.infer_shapes({1, 3, 224, 224});
  CHECK(shapes.at("stem.relu") == Shape{1, 64, 112, 112});
  CHECK(shapes.at(model.resolve_tap("stem")) == Shape{1, 64, 56, 56});
  CHECK(shapes.at(model.resolve_tap("block1"))[1] == 256);
  CHECK(shapes.at(model.resolve_tap("transition1")) == Shape{1, 128, 28, 28});
  CHECK(shapes.at(model.resolve_tap("block2"))[1] == 512);
  CHECK(shapes.at(model.resolve_tap("transition2")) == Shape{1, 256, 14, 14});
  CHECK(shapes.at(model.resolve_tap("block3"))[1] == 1280);
  CHECK(shapes.at(model.resolve_tap("transition3")) == Shape{1, 640, 7, 7});
  CHECK(shapes.at(model.resolve_tap("block4")) == Shape{1, 1664, 7, 7});
  CHECK(shapes.at(model.output_name()) == Shape{1, 2});
}

TEST_CASE("toy classifier produces two probabilities") {
  auto model = build_classifier(DenseNetConfig::toy());
  auto out = classify(model, random_image(3, 32, 32, 11));
  CHECK(out.probs[0] + out.probs[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(model.forward(random_image(3, 32, 32, 12)).shape() == Shape{1, 2});
  CHECK_THROWS_AS(classify(model, random_image(3, 16, 16, 1)), ShapeError);
}

TEST_CASE("label decision and tie rule") {
  CHECK(decide_label(3.0, -1.0) == Label::background);
  CHECK(decide_label(-1.0, 3.0) == Label::crack);
  CHECK(decide_label(0.25, 0.25) == Label::crack);
  for (double shift : {-100.0, 0.0, 7.5}) {
    CHECK(decide_label(3.0 + shift, -1.0 + shift) == Label::background);
  }
  CHECK(label_from_string("crack") == Label::crack);
  CHECK(std::string(to_string(Label::background)) == "background");
}

TEST_CASE("classifier config validation") {
  auto c = DenseNetConfig::toy();
  c.num_classes = 3;
  CHECK_THROWS_AS(build_classifier(c), ValueError);
  c = DenseNetConfig::toy();
  c.block_sizes = {2, 0};
  CHECK_THROWS_AS(build_classifier(c), ValueError);
  c = DenseNetConfig::toy();
  c.growth_rate = 0;
  CHECK_THROWS_AS(build_classifier(c), ValueError);
}

TEST_CASE("aspp branch arithmetic") {
  auto aspp = build_aspp(1024, {6, 12, 18}, 256);
  ModelGraph g(ModelMetadata{ModelTask::segmentation, 1024, 24, 32, 2, {}});
  Rng rng(4);
  g.append(aspp, rng);
  CHECK(g.layer("aspp.concat").out_channels == 1280);
  CHECK(g.layer("aspp.concat").inputs.size() == 5);
  CHECK(g.layer("aspp.project.conv").in_channels == 1280);
  auto shapes = g.infer_shapes({1, 1024, 24, 32});
  for (const auto& branch : g.layer("aspp.concat").inputs) {
    CHECK(shapes.at(branch) == Shape{1, 256, 24, 32});
  }
  CHECK(shapes.at(aspp.output) == Shape{1, 256, 24, 32});

  auto single = build_aspp(8, {2}, 4, {"a", kInputNode, false});
  CHECK(std::count_if(single.layers.begin(), single.layers.end(), [](const LayerSpec& l) {
          return l.name == "a.concat";
        }) == 1);
  ModelGraph h(ModelMetadata{ModelTask::segmentation, 8, 6, 6, 2, {}});
  Rng r(5);
  h.append(single, r);
  CHECK(h.layer("a.concat").inputs.size() == 3);
  CHECK(h.forward(random_image(8, 6, 6, 6)).shape() == Shape{1, 4, 6, 6});

  CHECK_THROWS_AS(build_aspp(8, {2, 2}, 4), ValueError);
  CHECK_THROWS_AS(build_aspp(8, {0}, 4), ValueError);
}

TEST_CASE("segmenter shape trace at full size") {
  auto config = SegmenterConfig::standard();
  auto model = build_segmenter(config);
  auto shapes = model.infer_shapes({1, 3, 384, 512});
  CHECK(shapes.at(model.output_name()) == Shape{1, 2, 384, 512});
  CHECK(shapes.at(model.resolve_tap("aspp")) == Shape{1, 256, 24, 32});
  CHECK(shapes.at(model.resolve_tap("decoder.low")) == Shape{1, 48, 96, 128});
  CHECK(shapes.at(model.resolve_tap("decoder.high")) == Shape{1, 256, 96, 128});
  CHECK(shapes.at(model.resolve_tap("decoder.concat")) == Shape{1, 304, 96, 128});
  CHECK(stage_strides(config) == std::vector<std::int64_t>{4, 4, 8, 16});

  auto os8 = config;
  os8.output_stride = 8;
  auto m8 = build_segmenter(os8);
  CHECK(m8.infer_shapes({1, 3, 384, 512}).at(m8.resolve_tap("aspp")) ==
        Shape{1, 256, 48, 64});
  CHECK(m8.layer("block3.layer1.conv2").conv.dilation[0] == 2);
}

TEST_CASE("toy segmenter output matches input size") {
  auto config = SegmenterConfig::toy();
  auto model = build_segmenter(config);
  for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{64, 64}, {32, 48}, {16, 8}}) {
    CHECK(model.infer_shapes({1, 3, h, w}).at(model.output_name()) == Shape{1, 2, h, w});
  }
  auto micro = build_segmenter(micro_segmenter());
  auto logits = micro.forward(random_image(3, 16, 16, 21));
  CHECK(logits.shape() == Shape{1, 2, 16, 16});
  auto probs = ops::softmax(logits, 1);
  for (std::int64_t i = 0; i < 256; ++i) {
    CHECK(probs.data()[i] + probs.data()[256 + i] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("segment thresholds strictly") {
  auto model = build_segmenter(micro_segmenter());
  auto& params = model.parameters();
  // Zero classifier weights: logits become the bias everywhere.
  auto zero = [&](const std::string& name) {
    auto d = params.at(name).value.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  };
  zero("classifier.weight");
  zero("classifier.bias");
  auto image = random_image(3, 16, 16, 8);
  auto mask = segment(model, image);
  CHECK(mask.shape() == Shape{16, 16});
  CHECK(ops::sum(mask).item() == 0.0);

  params.at("classifier.bias").value.mutable_data()[1] = 4.0;
  mask = segment(model, image);
  CHECK(ops::sum(mask).item() == 256.0);
  CHECK_THROWS_AS(segment(model, random_image(3, 8, 8, 1)), ShapeError);
}

TEST_CASE("segmenter config validation") {
  auto c = SegmenterConfig::toy();
  c.output_stride = 32;
  CHECK_THROWS_AS(build_segmenter(c), ValueError);
  c = SegmenterConfig::toy();
  c.backbone = "resnet";
  CHECK_THROWS_AS(build_segmenter(c), ValueError);
  c = SegmenterConfig::toy();
  c.low_level_stage = 9;
  CHECK_THROWS_AS(build_segmenter(c), ValueError);
  c = SegmenterConfig::toy();
  c.aspp_rates = {3, 3};
  CHECK_THROWS_AS(build_segmenter(c), ValueError);
}

TEST_CASE("taps return exact intermediates") {
  auto model = build_segmenter(micro_segmenter());
  auto image = random_image(3, 16, 16, 31);
  auto plain = model.forward(image);

  auto none = model.forward_with_taps(image, {});
  CHECK(bit_equal(none.output, plain));
  CHECK(none.taps.empty());

  auto last = model.forward_with_taps(image, {"logits"});
  CHECK(bit_equal(last.taps.at("logits"), plain));

  const auto aliases = model.tap_aliases();
  auto all = model.forward_with_taps(image, aliases);
  CHECK(bit_equal(all.output, plain));
  for (const auto& alias : aliases) {
    const auto node = model.resolve_tap(alias);
    auto refed = model.forward_with_overrides(image, {{node, all.taps.at(alias)}});
    CHECK_MESSAGE(bit_equal(refed, plain), alias);
  }
  CHECK_THROWS_AS(model.forward_with_taps(image, {"nope"}), ValueError);
}

TEST_CASE("overrides cut the graph at the pinned node") {
  auto model = build_classifier(micro_classifier());
  auto image = random_image(3, 32, 32, 41);
  auto taps = model.forward_with_taps(image, {"features"});
  // Feeding a different image with features pinned must not change the output.
  auto other = random_image(3, 32, 32, 42);
  auto pinned = model.forward_with_overrides(
      other, {{model.resolve_tap("features"), taps.taps.at("features")}});
  CHECK(bit_equal(pinned, taps.output));
}

TEST_CASE("forward is deterministic and builds are seeded") {
  auto a = build_classifier(micro_classifier());
  auto b = build_classifier(micro_classifier());
  auto image = random_image(3, 32, 32, 51);
  CHECK(bit_equal(a.forward(image), a.forward(image)));
  CHECK(bit_equal(a.forward(image), b.forward(image)));
  auto c = micro_classifier();
  c.seed = 7;
  CHECK_FALSE(bit_equal(build_classifier(c).forward(image), a.forward(image)));
}

TEST_CASE("parameter initialization") {
  auto model = build_classifier(DenseNetConfig::toy());
  const auto& p = model.parameters();
  for (double v : p.at("stem.bn.gamma").value.data()) CHECK(v == 1.0);
  for (double v : p.at("stem.bn.beta").value.data()) CHECK(v == 0.0);
  CHECK_FALSE(p.at("stem.bn.running_mean").trainable);
  const auto& w = p.at("block3.layer1.conv1.weight").value;
  double ss = 0;
  for (double v : w.data()) ss += v * v;
  const double fan_in = static_cast<double>(w.numel() / w.dim(0));
  CHECK(std::sqrt(ss / static_cast<double>(w.numel())) ==
        doctest::Approx(std::sqrt(2.0 / fan_in)).epsilon(0.35));
  model.validate();
}

TEST_CASE("training forward updates running buffers and supports backward") {
  auto model = build_classifier(micro_classifier());
  Rng rng(3);
  auto batch = randn({2, 3, 32, 32}, rng);
  auto before = model.parameters().at("stem.bn.running_mean").value.clone();
  auto logits = model.forward_train(batch);
  std::vector<int> targets{0, 1};
  auto loss = ops::cross_entropy(logits, targets);
  loss.backward();
  CHECK(model.parameters().at("classifier.weight").value.has_grad());
  CHECK(model.parameters().at("stem.conv.weight").value.has_grad());
  CHECK_FALSE(bit_equal(before, model.parameters().at("stem.bn.running_mean").value));
}

TEST_CASE("snapshot and restore") {
  auto model = build_classifier(micro_classifier());
  auto image = random_image(3, 32, 32, 61);
  auto saved = model.snapshot();
  auto reference = model.forward(image);
  model.parameters().at("classifier.bias").value.mutable_data()[1] += 1.0;
  CHECK_FALSE(bit_equal(model.forward(image), reference));
  model.restore(saved);
  CHECK(bit_equal(model.forward(image), reference));
}

TEST_CASE("model config text round trip") {
  ModelConfig seg = SegmenterConfig::toy();
  auto text = to_key_values(seg).dump();
  auto back = model_config_from(KeyValueConfig::parse(text));
  CHECK(to_key_values(back).dump() == text);

  auto kv = KeyValueConfig::parse("model = classifier\npreset = toy\ngrowth_rate = 6\n");
  auto cls = std::get<DenseNetConfig>(model_config_from(kv));
  CHECK(cls.growth_rate == 6);
  CHECK(cls.block_sizes == std::vector<std::int64_t>{2, 2, 2, 2});

  CHECK_THROWS_AS(model_config_from(KeyValueConfig::parse("model = classifier\nbogus = 1\n")),
                  ValueError);
  CHECK_THROWS_AS(model_config_from(KeyValueConfig::parse("model = tree\n")), ValueError);
  CHECK_THROWS_AS(KeyValueConfig::parse("a = 1\na = 2\n"), ValueError);
  CHECK_THROWS_AS(KeyValueConfig::parse("just text\n"), ValueError);

  auto path = std::filesystem::temp_directory_path() / "tunnelcrack_model_config.txt";
  save_model_config(seg, path);
  CHECK(to_key_values(load_model_config(path)).dump() == text);
  std::filesystem::remove(path);
}
