#include <benchmark/benchmark.h>

#include "lipscope/attention.hpp"
#include "lipscope/init.hpp"
#include "lipscope/linalg.hpp"
#include "lipscope/lipschitz.hpp"
#include "lipscope/network.hpp"
#include "lipscope/rng.hpp"

namespace {

using namespace lipscope;

DenseMatrix gaussian(std::size_t r, std::size_t c, std::uint64_t seed) {
  DenseMatrix m(r, c);
  Rng(seed, {kStreamData}).fill_normal(m.data());
  return m;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const DenseMatrix a = gaussian(n, n, 1), b = gaussian(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256)->Arg(512)->Unit(benchmark::kMicrosecond);

void BM_SpectralNorm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const DenseMatrix a = gaussian(n, n, 3);
  for (auto _ : state) benchmark::DoNotOptimize(spectral_norm(a));
}
BENCHMARK(BM_SpectralNorm)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_SingularValues(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto method = static_cast<SvdMethod>(state.range(1));
  const DenseMatrix a = gaussian(n, n, 4);
  for (auto _ : state) benchmark::DoNotOptimize(full_singular_values(a, method));
}
BENCHMARK(BM_SingularValues)
    ->Args({128, static_cast<int>(SvdMethod::Jacobi)})
    ->Args({128, static_cast<int>(SvdMethod::Auto)})
    ->Args({512, static_cast<int>(SvdMethod::Auto)})
    ->Unit(benchmark::kMillisecond);

void BM_AttentionForward(benchmark::State& state) {
  const auto kind = static_cast<AttentionKind>(state.range(0));
  const std::size_t dim = 256, tokens = 256;
  AttentionParams p;
  p.kind = kind;
  p.dim = dim;
  p.heads = 8;
  const InitSpec init{InitMethod::XavierNormal, 1.0};
  p.wq = init_matrix(init, dim, dim, 5);
  p.wk = init_matrix(init, dim, dim, 6);
  p.wv = init_matrix(init, dim, dim, 7);
  const DenseMatrix x = gaussian(dim, tokens, 8);
  for (auto _ : state) benchmark::DoNotOptimize(attn_forward(p, x));
  state.SetLabel(to_string(kind));
}
BENCHMARK(BM_AttentionForward)
    ->Arg(static_cast<int>(AttentionKind::DPA))
    ->Arg(static_cast<int>(AttentionKind::L2A))
    ->Arg(static_cast<int>(AttentionKind::SCSA))
    ->Unit(benchmark::kMillisecond);

void BM_EstimateK(benchmark::State& state) {
  const auto family = static_cast<Family>(state.range(0));
  NetworkSpec s = desk_spec(family);
  s.depth = 2;
  s.width = 64;
  s.input_height = s.input_width = 8;
  const Network net = Network::build(s, 0);
  EstimatorOptions o;
  o.base_points = 2;
  o.perturbations = 4;
  for (auto _ : state) benchmark::DoNotOptimize(estimate_K(net, o));
  state.SetLabel(to_string(family));
}
BENCHMARK(BM_EstimateK)
    ->Arg(static_cast<int>(Family::ResNetConv))
    ->Arg(static_cast<int>(Family::TransformerDPA))
    ->Arg(static_cast<int>(Family::TransformerSCSA))
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
