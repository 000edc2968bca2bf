#include <benchmark/benchmark.h>

#include "xfer/data.hpp"
#include "xfer/models.hpp"
#include "xfer/nn.hpp"
#include "xfer/rng.hpp"
#include "xfer/tensor.hpp"
#include "xfer/transforms.hpp"

namespace {

using namespace xfer;

TensorPtr random_tensor(std::vector<int> shape, Rng& rng, bool grad = false) {
  const int n = shape_size(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::make(std::move(shape), std::move(v), grad);
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  Rng rng(1);
  const TensorPtr img = random_tensor({1, 28, 28}, rng);
  const TensorPtr w = random_tensor({8, 1, 3, 3}, rng, true);
  const TensorPtr b = random_tensor({8}, rng, true);
  for (auto _ : state) {
    w->zero_grad();
    b->zero_grad();
    const TensorPtr loss = sum(maxpool2x2(relu(conv2d(img, w, b))));
    backward(loss);
    benchmark::DoNotOptimize(loss->value());
  }
}
BENCHMARK(BM_Conv2dForwardBackward);

void BM_LstmSequence150(benchmark::State& state) {
  Rng rng(2);
  const int hidden = 32;
  const LstmWeights w{random_tensor({4 * hidden, 1}, rng, true),
                      random_tensor({4 * hidden, hidden}, rng, true),
                      random_tensor({4 * hidden}, rng, true)};
  const TensorPtr frames = random_tensor({150, 1}, rng);
  for (auto _ : state) {
    w.wx->zero_grad();
    w.wh->zero_grad();
    w.b->zero_grad();
    TensorPtr h = Tensor::zeros({hidden});
    TensorPtr c = Tensor::zeros({hidden});
    std::vector<TensorPtr> hs;
    for (int t = 0; t < 150; ++t) {
      auto [hn, cn] = lstm_cell(row(frames, t), h, c, w);
      h = hn;
      c = cn;
      hs.push_back(h);
    }
    const TensorPtr loss = sum(stack_rows(hs));
    backward(loss);
    benchmark::DoNotOptimize(loss->value());
  }
}
BENCHMARK(BM_LstmSequence150);

void BM_GridSample28(benchmark::State& state) {
  Rng rng(3);
  const TensorPtr img = random_tensor({28, 28}, rng);
  const TensorPtr tm = Tensor::make(
      {3, 3}, {0.95, -0.2, 0.013, 0.2, 0.95, -0.017, 0.0, 0.0, 1.0}, true);
  for (auto _ : state) {
    tm->zero_grad();
    const TensorPtr loss = sum(grid_sample(img, tm));
    backward(loss);
    benchmark::DoNotOptimize(loss->value());
  }
}
BENCHMARK(BM_GridSample28);

void BM_ToyGeneration(benchmark::State& state) {
  const ToyGenConfig cfg;
  std::uint64_t seed = 1;
  for (auto _ : state) {
    const SequenceDataset ds =
        generate_toy_lane_changes(cfg, ToyDomain::noisy, static_cast<int>(state.range(0)), seed++);
    benchmark::DoNotOptimize(ds.size());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ToyGeneration)->Arg(64);

void BM_SyntheticDigits(benchmark::State& state) {
  std::uint64_t seed = 1;
  for (auto _ : state) {
    const ImageDataset ds = generate_synthetic_digits(static_cast<int>(state.range(0)), seed++);
    benchmark::DoNotOptimize(ds.size());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SyntheticDigits)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
