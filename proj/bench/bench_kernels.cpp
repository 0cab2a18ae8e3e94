// Serial reference kernels against their OpenMP versions.
//   ./bench_kernels --benchmark_filter=Attention
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "pasrec/kernels.hpp"

using namespace pasrec;

namespace {

Matrix random_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = n01(rng);
  }
  return m;
}

struct AttentionInputs {
  kernels::AttentionShape shape;
  Matrix q, k, v;
  std::vector<std::uint8_t> mask;

  explicit AttentionInputs(int batch) {
    shape = {batch, 50, 2, 64};
    const int rows = batch * shape.len;
    q = random_matrix(rows, shape.dim, 1);
    k = random_matrix(rows, shape.dim, 2);
    v = random_matrix(rows, shape.dim, 3);
    mask.assign(static_cast<size_t>(rows), 1);
    // Left padding of varying length, as in real batches.
    for (int b = 0; b < batch; ++b) {
      for (int p = 0; p < (b * 7) % shape.len; ++p) mask[static_cast<size_t>(b * shape.len + p)] = 0;
    }
  }
};

template <bool Parallel>
void BM_AttentionForward(benchmark::State& state) {
  const AttentionInputs in(static_cast<int>(state.range(0)));
  Matrix out;
  kernels::AttentionProbs probs;
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::attention_forward_parallel(in.q, in.k, in.v, in.mask, in.shape, out, probs);
    } else {
      kernels::attention_forward_serial(in.q, in.k, in.v, in.mask, in.shape, out, probs);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_AttentionBackward(benchmark::State& state) {
  const AttentionInputs in(static_cast<int>(state.range(0)));
  Matrix out, dq, dk, dv;
  kernels::AttentionProbs probs;
  kernels::attention_forward_serial(in.q, in.k, in.v, in.mask, in.shape, out, probs);
  const Matrix grad = random_matrix(static_cast<int>(out.rows()), static_cast<int>(out.cols()), 4);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::attention_backward_parallel(grad, in.q, in.k, in.v, probs, in.shape, dq, dk, dv);
    } else {
      kernels::attention_backward_serial(grad, in.q, in.k, in.v, probs, in.shape, dq, dk, dv);
    }
    benchmark::DoNotOptimize(dq.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_Score(benchmark::State& state) {
  const Matrix queries = random_matrix(static_cast<int>(state.range(0)), 64, 5);
  const Matrix table = random_matrix(12102, 64, 6);
  Matrix scores;
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::score_parallel(queries, table, true, scores);
    } else {
      kernels::score_serial(queries, table, true, scores);
    }
    benchmark::DoNotOptimize(scores.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_AttentionForward<false>)->Name("AttentionForward/serial")->Arg(32)->Arg(256);
BENCHMARK(BM_AttentionForward<true>)->Name("AttentionForward/parallel")->Arg(32)->Arg(256);
BENCHMARK(BM_AttentionBackward<false>)->Name("AttentionBackward/serial")->Arg(32)->Arg(256);
BENCHMARK(BM_AttentionBackward<true>)->Name("AttentionBackward/parallel")->Arg(32)->Arg(256);
BENCHMARK(BM_Score<false>)->Name("Score/serial")->Arg(32);
BENCHMARK(BM_Score<true>)->Name("Score/parallel")->Arg(32);

BENCHMARK_MAIN();
