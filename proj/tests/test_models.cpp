#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "support/finite_diff.hpp"
#include "xfer/models.hpp"
#include "xfer/optimizer.hpp"
#include "xfer/rng.hpp"

using namespace xfer;

namespace {

ArchSpec tagger_spec(int features, int hidden, int classes) {
  ArchSpec s;
  s.kind = "lstm-tagger";
  s.features = features;
  s.hidden = hidden;
  s.classes = classes;
  return s;
}

ArchSpec lstm_converter_spec(int features, int hidden) {
  ArchSpec s;
  s.kind = "lstm-converter";
  s.features = features;
  s.hidden = hidden;
  return s;
}

TensorPtr random_frames(int len, int features, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(len) * features);
  for (double& x : v) x = rng.uniform(0.0, 1.0);
  return Tensor::make({len, features}, std::move(v));
}

}  // namespace

TEST_CASE("tagger output shapes per architecture") {
  Rng rng(3);
  SUBCASE("two features, hidden 64, three classes") {
    const Model m = build_model(tagger_spec(2, 64, 3), 1);
    const TensorPtr out = m.forward_sequence(random_frames(20, 2, rng));
    CHECK(out->shape == std::vector<int>{20, 3});
  }
  SUBCASE("one feature, hidden 32, two classes") {
    const Model m = build_model(tagger_spec(1, 32, 2), 1);
    const TensorPtr out = m.forward_sequence(random_frames(150, 1, rng));
    CHECK(out->shape == std::vector<int>{150, 2});
  }
}

TEST_CASE("cnn classifier maps a 28x28 image to ten logits") {
  ArchSpec s;
  s.kind = "cnn-classifier";
  const Model m = build_model(s, 1);
  Rng rng(5);
  std::vector<double> img(28 * 28);
  for (double& v : img) v = rng.uniform(0.0, 1.0);
  const TensorPtr out = m.forward_image(Tensor::make({28, 28}, std::move(img)));
  CHECK(out->shape == std::vector<int>{10});
}

TEST_CASE("unknown architectures and non-positive sizes are rejected") {
  ArchSpec s;
  s.kind = "mlp";
  CHECK_THROWS_AS((void)build_model(s, 1), std::invalid_argument);
  ArchSpec bad = tagger_spec(1, 0, 2);
  CHECK_THROWS_AS((void)build_model(bad, 1), std::invalid_argument);
}

TEST_CASE("lstm converter emits one matrix per frame of the declared size") {
  Rng rng(7);
  SUBCASE("one feature, hidden 16: 2x2 matrices over 150 frames") {
    const Converter c = build_converter(lstm_converter_spec(1, 16), 2);
    LabeledSequence seq;
    seq.features = 1;
    seq.frames.assign(150, 0.4);
    seq.labels.assign(150, kLabelFollow);
    seq.weights.assign(150, 1.0);
    const auto mats = c.matrices_for_sequence(seq);
    REQUIRE(mats.size() == 150);
    CHECK(mats[0].dim == 1);
    CHECK(mats[0].side() == 2);
  }
  SUBCASE("two features, hidden 32: 3x3 matrices") {
    const Converter c = build_converter(lstm_converter_spec(2, 32), 2);
    LabeledSequence seq;
    seq.features = 2;
    seq.frames.assign(40, 0.3);
    seq.labels.assign(20, kLabelFollow);
    seq.weights.assign(20, 1.0);
    const auto mats = c.matrices_for_sequence(seq);
    REQUIRE(mats.size() == 20);
    CHECK(mats[0].side() == 3);
  }
}

TEST_CASE("identity head makes every converter output the exact identity") {
  Converter c = build_converter(lstm_converter_spec(1, 16), 3);
  c.set_head_identity();
  LabeledSequence seq;
  seq.features = 1;
  seq.frames = {0.1, 0.5, 0.9, 0.25};
  seq.labels.assign(4, kLabelFollow);
  seq.weights.assign(4, 1.0);
  for (const auto& m : c.matrices_for_sequence(seq)) {
    CHECK(m.at(0, 0) == 1.0);
    CHECK(m.at(0, 1) == 0.0);
    CHECK(m.at(1, 0) == 0.0);
    CHECK(m.at(1, 1) == 1.0);
  }
  // applying the outputs reproduces the input bitwise
  const TensorPtr h = c.convert_sequence(sequence_tensor(seq));
  for (int t = 0; t < 4; ++t) {
    CHECK(h->at(t, 0) == seq.frames[static_cast<std::size_t>(t)]);
    CHECK(h->at(t, 1) == 1.0);
  }
}

TEST_CASE("identity head on the euclidean image converter") {
  ArchSpec s;
  s.kind = "cnn-converter";
  s.channels = {4, 8};
  s.family = TransformFamily::euclidean;
  Converter c = build_converter(s, 4);
  c.set_head_identity();
  Rng rng(11);
  std::vector<double> img(28 * 28);
  for (double& v : img) v = rng.uniform(0.0, 1.0);
  const TransformMatrix t = c.matrix_for_image(img, 28, 28);
  CHECK(t.family_valid(1e-12));
  for (int r = 0; r < 3; ++r) {
    for (int cc = 0; cc < 3; ++cc) CHECK(t.at(r, cc) == (r == cc ? 1.0 : 0.0));
  }
}

TEST_CASE("euclidean image converter always satisfies its family contract") {
  ArchSpec s;
  s.kind = "cnn-converter";
  s.channels = {4, 8};
  s.family = TransformFamily::euclidean;
  const Converter c = build_converter(s, 5);
  Rng rng(13);
  for (int i = 0; i < 5; ++i) {
    std::vector<double> img(28 * 28);
    for (double& v : img) v = rng.uniform(0.0, 1.0);
    CHECK(c.matrix_for_image(img, 28, 28).family_valid(1e-9));
  }
}

TEST_CASE("converter output gradients w.r.t. lstm weights match finite differences") {
  const Converter c = build_converter(lstm_converter_spec(1, 4), 6);
  Rng rng(17);
  const TensorPtr frames = random_frames(5, 1, rng);
  const auto res = xfer::testing::check_gradients(c.params.tensors(), [&] {
    return sum(c.matrix_entries_for_sequence(frames));
  });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("softmax output activation normalizes each matrix") {
  ArchSpec s = lstm_converter_spec(1, 8);
  s.activation = OutputActivation::softmax;
  const Converter c = build_converter(s, 7);
  Rng rng(19);
  const TensorPtr entries = c.matrix_entries_for_sequence(random_frames(6, 1, rng));
  for (int t = 0; t < 6; ++t) {
    double sum = 0.0;
    for (int j = 0; j < 4; ++j) {
      CHECK(entries->at(t, j) >= 0.0);
      sum += entries->at(t, j);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("frozen parameters stay bit-identical under optimizer steps") {
  Model m = build_model(tagger_spec(1, 8, 2), 9);
  m.set_trainable_head_only();
  const std::vector<double> wx_before = m.params.get("lstm.wx")->data;
  Rng rng(23);
  Optimizer opt(m.head_params(), {});
  for (int step = 0; step < 5; ++step) {
    opt.zero_grad();
    const TensorPtr logits = m.forward_sequence(random_frames(10, 1, rng));
    backward(weighted_cross_entropy(logits, std::vector<int>(10, 1),
                                    std::vector<double>(10, 1.0)));
    opt.step();
  }
  CHECK(m.params.get("lstm.wx")->data == wx_before);
  CHECK(m.params.get("fc.w")->data != build_model(tagger_spec(1, 8, 2), 9).params.get("fc.w")->data);
}

TEST_CASE("default converters are smaller than their task models") {
  // image pair
  ArchSpec ms;
  ms.kind = "cnn-classifier";
  const Model img_model = build_model(ms, 1);
  ArchSpec cs;
  cs.kind = "cnn-converter";
  cs.channels = {8, 16};
  cs.family = TransformFamily::euclidean;
  const Converter img_conv = build_converter(cs, 1);
  CHECK(img_conv.params.value_count() < img_model.params.value_count());

  // toy sequence pair
  const Model toy_model = build_model(tagger_spec(1, 32, 2), 1);
  const Converter toy_conv = build_converter(lstm_converter_spec(1, 16), 1);
  CHECK(toy_conv.params.value_count() < toy_model.params.value_count());

  // two-feature sequence pair
  const Model lc_model = build_model(tagger_spec(2, 64, 3), 1);
  const Converter lc_conv = build_converter(lstm_converter_spec(2, 32), 1);
  CHECK(lc_conv.params.value_count() < lc_model.params.value_count());

  // direct sequence variant
  ArchSpec ds = lstm_converter_spec(1, 16);
  ds.kind = "direct-lstm-converter";
  const Converter direct = build_converter(ds, 1);
  CHECK(direct.params.value_count() < toy_model.params.value_count());
}

TEST_CASE("checkpoints round-trip parameters and architecture") {
  const std::string path =
      (std::filesystem::temp_directory_path() / "xfer_ckpt_test.bin").string();
  Model m = build_model(tagger_spec(2, 8, 3), 31);
  m.params.get("fc.b")->data = {0.25, -0.5, 0.125};
  save_checkpoint(m, path);
  const Model back = load_model_checkpoint(path);
  CHECK(back.spec.kind == "lstm-tagger");
  CHECK(back.spec.hidden == 8);
  CHECK(back.head_names == m.head_names);
  for (const auto& [name, t] : m.params.items()) {
    CHECK(back.params.get(name)->data == t->data);
  }
  CHECK_THROWS_AS((void)load_converter_checkpoint(path), std::runtime_error);  // wrong kind

  Converter c = build_converter(lstm_converter_spec(1, 4), 33);
  save_checkpoint(c, path);
  const Converter cback = load_converter_checkpoint(path);
  for (const auto& [name, t] : c.params.items()) {
    CHECK(cback.params.get(name)->data == t->data);
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader rejects foreign files") {
  const std::string path =
      (std::filesystem::temp_directory_path() / "xfer_ckpt_garbage.bin").string();
  std::ofstream(path) << "not a checkpoint at all";
  CHECK_THROWS_AS((void)load_model_checkpoint(path), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("arch spec round-trips through its text form") {
  ArchSpec s = lstm_converter_spec(2, 32);
  s.family = TransformFamily::affine;
  s.activation = OutputActivation::softmax;
  const ArchSpec back = ArchSpec::from_string(s.to_string());
  CHECK(back.kind == s.kind);
  CHECK(back.features == s.features);
  CHECK(back.hidden == s.hidden);
  CHECK(back.family == s.family);
  CHECK(back.activation == s.activation);
  CHECK_THROWS_AS((void)ArchSpec::from_string("kind=x;bogus=1"), std::invalid_argument);
}

TEST_CASE("sequence inputs must be [length, features] with length > 0") {
  // zero-length sequences are unrepresentable as tensors; a 1-D input is the
  // malformed case both entry points reject
  const Converter c = build_converter(lstm_converter_spec(1, 4), 35);
  CHECK_THROWS((void)c.matrix_entries_for_sequence(Tensor::make({1}, {0.5})));
  const Model m = build_model(tagger_spec(1, 4, 2), 35);
  CHECK_THROWS((void)m.forward_sequence(Tensor::make({1}, {0.5})));
}
