#include <doctest.h>

#include <cmath>

#include "support/finite_diff.hpp"
#include "xfer/rng.hpp"
#include "xfer/transforms.hpp"

using namespace xfer;

namespace {

TransformMatrix random_affine(Rng& rng) {
  TransformMatrix t(2, TransformFamily::affine);
  // keep it comfortably invertible
  t.at(0, 0) = rng.uniform(0.6, 1.4);
  t.at(0, 1) = rng.uniform(-0.4, 0.4);
  t.at(1, 0) = rng.uniform(-0.4, 0.4);
  t.at(1, 1) = rng.uniform(0.6, 1.4);
  t.at(0, 2) = rng.uniform(-1.0, 1.0);
  t.at(1, 2) = rng.uniform(-1.0, 1.0);
  t.at(2, 2) = 1.0;
  return t;
}

TensorPtr random_image(int h, int w, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(h) * w);
  for (double& x : v) x = rng.uniform(0.0, 1.0);
  return Tensor::make({h, w}, std::move(v));
}

}  // namespace

TEST_CASE("euclidean constructor hits the expected matrices") {
  const TransformMatrix id = make_euclidean(0.0, 0.0, 0.0);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) CHECK(id.at(r, c) == doctest::Approx(r == c ? 1.0 : 0.0).epsilon(1e-15));
  }

  const TransformMatrix half_turn = make_euclidean(M_PI, 0.0, 0.0);
  const double want_half[9] = {-1, 0, 0, 0, -1, 0, 0, 0, 1};
  for (int i = 0; i < 9; ++i) {
    CHECK(std::fabs(half_turn.entries[static_cast<std::size_t>(i)] - want_half[i]) < 1e-12);
  }

  const TransformMatrix quarter = make_euclidean(M_PI / 2, 1.0, 2.0);
  const double want_quarter[9] = {0, -1, 1, 1, 0, 2, 0, 0, 1};
  for (int i = 0; i < 9; ++i) {
    CHECK(std::fabs(quarter.entries[static_cast<std::size_t>(i)] - want_quarter[i]) < 1e-12);
  }
}

TEST_CASE("euclidean constructors satisfy the family contract tightly") {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const TransformMatrix t =
        make_euclidean(rng.uniform(-3.2, 3.2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    CHECK(t.family_valid(1e-12));
    const double det2 = t.at(0, 0) * t.at(1, 1) - t.at(0, 1) * t.at(1, 0);
    CHECK(std::fabs(det2 - 1.0) < 1e-12);
  }
}

TEST_CASE("apply_point: identity, half turn, inverse round trip") {
  const TransformMatrix id = TransformMatrix::identity(2);
  const auto p = id.apply_point({3.0, 4.0});
  CHECK(p[0] == 3.0);
  CHECK(p[1] == 4.0);

  const auto q = make_euclidean(M_PI, 0, 0).apply_point({1.0, 0.0});
  CHECK(q[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(std::fabs(q[1]) < 1e-12);

  Rng rng(17);
  for (int i = 0; i < 30; ++i) {
    const TransformMatrix t = random_affine(rng);
    const std::vector<double> orig{rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const auto back = t.inverse().apply_point(t.apply_point(orig));
    CHECK(std::fabs(back[0] - orig[0]) < 1e-10);
    CHECK(std::fabs(back[1] - orig[1]) < 1e-10);
  }
}

TEST_CASE("composition of affine transforms matches the matrix product") {
  Rng rng(23);
  for (int i = 0; i < 30; ++i) {
    const TransformMatrix t1 = random_affine(rng);
    const TransformMatrix t2 = random_affine(rng);
    const std::vector<double> p{rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const auto two_step = t2.apply_point(t1.apply_point(p));
    const auto fused = t2.times(t1).apply_point(p);
    CHECK(std::fabs(two_step[0] - fused[0]) < 1e-10);
    CHECK(std::fabs(two_step[1] - fused[1]) < 1e-10);
  }
}

TEST_CASE("projective apply renormalizes and rejects degenerate denominators") {
  TransformMatrix t(2, TransformFamily::projective);
  t.at(0, 0) = 1;
  t.at(1, 1) = 1;
  t.at(2, 0) = 0.5;
  t.at(2, 2) = 1;
  const auto p = t.apply_point({2.0, 3.0});
  CHECK(p[0] == doctest::Approx(1.0));   // 2 / (1 + 0.5*2)
  CHECK(p[1] == doctest::Approx(1.5));

  TransformMatrix bad = t;
  bad.at(2, 0) = -0.5;
  bad.at(2, 2) = 1.0;
  CHECK_THROWS_AS((void)bad.apply_point({2.0, 0.0}), std::runtime_error);
}

TEST_CASE("apply_frame: identity, neutral-frame target, affine arithmetic") {
  const auto same = TransformMatrix::identity(1).apply_frame({0.73});
  CHECK(same[0] == 0.73);

  // maps any center-line distance onto the lane middle
  const auto mid = follow_center_target(1).apply_frame({0.9});
  CHECK(mid[0] == doctest::Approx(0.5).epsilon(1e-15));

  TransformMatrix t(1, TransformFamily::affine);
  t.at(0, 0) = 2.0;
  t.at(0, 1) = 1.0;
  t.at(1, 1) = 1.0;
  CHECK(t.apply_frame({0.25})[0] == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("follow target for two features zeroes the second feature") {
  const auto out = follow_center_target(2).apply_frame({0.83, -0.4});
  CHECK(out[0] == doctest::Approx(0.5));
  CHECK(out[1] == 0.0);
}

TEST_CASE("grid_sample with the identity transform is exact") {
  Rng rng(31);
  const TensorPtr img = random_image(9, 12, rng);
  const TensorPtr out = sample_image(img, TransformMatrix::identity(2));
  CHECK(out->data == img->data);  // bitwise
}

TEST_CASE("grid_sample at 180 degrees equals axis reversal and is an involution") {
  Rng rng(37);
  const TensorPtr img = random_image(10, 8, rng);
  const TransformMatrix half_turn = make_euclidean(M_PI, 0, 0);
  const TensorPtr once = sample_image(img, half_turn);
  for (int r = 0; r < 10; ++r) {
    for (int c = 0; c < 8; ++c) {
      CHECK(std::fabs(once->at(r, c) - img->at(9 - r, 7 - c)) < 1e-9);
    }
  }
  const TensorPtr twice = sample_image(once, half_turn);
  for (int i = 0; i < img->size(); ++i) CHECK(std::fabs(twice->at(i) - img->at(i)) < 1e-9);
}

TEST_CASE("one-pixel translation moves a delta and preserves mass") {
  const int h = 7, w = 7;
  std::vector<double> v(static_cast<std::size_t>(h) * w, 0.0);
  v[3 * 7 + 3] = 1.0;
  const TensorPtr img = Tensor::make({h, w}, std::move(v));
  // shifting the sampling grid by one pixel in normalized units
  TransformMatrix t = TransformMatrix::identity(2);
  t.at(0, 2) = 2.0 / (w - 1);
  const TensorPtr out = sample_image(img, t);
  // sample(r, c) = img(r, c+1): the delta lands one pixel to the left
  CHECK(out->at(3, 2) == doctest::Approx(1.0).epsilon(1e-9));
  double mass = 0.0;
  for (const double x : out->data) mass += x;
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));

  // hand-computed bilinear weights for a half-pixel shift
  TransformMatrix half = TransformMatrix::identity(2);
  half.at(0, 2) = 1.0 / (w - 1);
  const TensorPtr blur = sample_image(img, half);
  CHECK(blur->at(3, 2) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(blur->at(3, 3) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("grid_sample rejects a non-invertible transform") {
  Rng rng(41);
  const TensorPtr img = random_image(6, 6, rng);
  const TensorPtr singular = Tensor::zeros({3, 3});
  CHECK_THROWS_AS((void)grid_sample(img, singular), std::runtime_error);
}

TEST_CASE("grid_sample gradients w.r.t. transform entries match finite differences") {
  Rng rng(43);
  const TensorPtr img = random_image(8, 8, rng);
  // non-integer offsets keep the check away from the bilinear kinks
  const TensorPtr tm = Tensor::make(
      {3, 3}, {0.93, -0.21, 0.0137, 0.18, 0.88, -0.0191, 0.0, 0.0, 1.0}, true);
  const auto res = xfer::testing::check_gradients(
      {tm}, [&] { return sum(grid_sample(img, tm)); }, 1e-6);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("grid_sample gradients w.r.t. the image match finite differences") {
  Rng rng(47);
  const TensorPtr img = random_image(6, 7, rng);
  img->requires_grad = true;
  const TensorPtr tm = Tensor::make(
      {3, 3}, {0.95, 0.11, 0.0231, -0.14, 1.02, 0.0117, 0.0, 0.0, 1.0});
  const auto res = xfer::testing::check_gradients(
      {img}, [&] { return sum(grid_sample(img, tm)); }, 1e-6);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("assemble_euclidean builds the same matrix as the plain constructor") {
  const double angle = 0.7, tx = -0.3, ty = 0.45;
  const TensorPtr t = assemble_euclidean(Tensor::scalar(angle, true), Tensor::scalar(tx, true),
                                         Tensor::scalar(ty, true));
  const TransformMatrix want = make_euclidean(angle, tx, ty);
  for (int i = 0; i < 9; ++i) CHECK(t->at(i) == doctest::Approx(want.entries[static_cast<std::size_t>(i)]));

  const TensorPtr a = Tensor::scalar(angle, true);
  const TensorPtr x = Tensor::scalar(tx, true);
  const TensorPtr y = Tensor::scalar(ty, true);
  Rng rng(53);
  const TensorPtr img = random_image(8, 8, rng);
  const auto res = xfer::testing::check_gradients(
      {a, x, y}, [&] { return sum(grid_sample(img, assemble_euclidean(a, x, y))); }, 1e-6);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("apply_frame_h multiplies the homogeneous frame") {
  const TensorPtr tm = Tensor::make({2, 2}, {0.0, 0.5, 0.0, 1.0}, true);
  const TensorPtr frame = Tensor::make({1}, {0.9});
  const TensorPtr out = apply_frame_h(tm, frame);
  CHECK(out->at(0) == doctest::Approx(0.5));
  CHECK(out->at(1) == doctest::Approx(1.0));

  const auto res = xfer::testing::check_gradients(
      {tm}, [&] { return sum(apply_frame_h(tm, frame)); });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("family_valid distinguishes the families") {
  CHECK(TransformMatrix::identity(2, TransformFamily::euclidean).family_valid());
  TransformMatrix stretch(2, TransformFamily::euclidean);
  stretch.at(0, 0) = 2.0;
  stretch.at(1, 1) = 0.5;
  stretch.at(2, 2) = 1.0;
  CHECK_FALSE(stretch.family_valid());
  stretch.family = TransformFamily::affine;
  CHECK(stretch.family_valid());
  TransformMatrix skew_last = TransformMatrix::identity(2, TransformFamily::affine);
  skew_last.at(2, 0) = 0.3;
  CHECK_FALSE(skew_last.family_valid());
  skew_last.family = TransformFamily::unrestricted;
  CHECK(skew_last.family_valid());
}
