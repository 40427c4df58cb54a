// Serial vs OpenMP kernels on synthetic answer strings.
#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "vlmc/kernels.hpp"

namespace {

std::vector<std::string> make_texts(std::size_t n) {
  static const char* words[] = {"red", "horse", "field", "no parking", "kayaking", "umbrella", "two", "grass"};
  std::mt19937_64 rng(42);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    for (int w = 0; w < 4; ++w) s += std::string(words[rng() % 8]) + " ";
    out.push_back(s);
  }
  return out;
}

using vlmc::kernels::kTrigramDim;

template <auto Kernel>
void BM_Embed(benchmark::State& state) {
  const auto texts = make_texts(static_cast<std::size_t>(state.range(0)));
  std::vector<double> out(texts.size() * kTrigramDim);
  for (auto _ : state) {
    Kernel(texts, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Kernel>
void BM_Cosine(benchmark::State& state) {
  const auto texts = make_texts(static_cast<std::size_t>(state.range(0)));
  std::vector<double> rows(texts.size() * kTrigramDim);
  vlmc::kernels::trigram_embed_serial(texts, rows);
  std::vector<double> query(kTrigramDim);
  vlmc::kernels::trigram_embed_one("no parking", query);
  std::vector<double> out(texts.size());
  for (auto _ : state) {
    Kernel(query, rows, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_Embed<vlmc::kernels::trigram_embed_serial>)->Arg(16)->Arg(1024)->Arg(16384);
BENCHMARK(BM_Embed<vlmc::kernels::trigram_embed_parallel>)->Arg(16)->Arg(1024)->Arg(16384);
BENCHMARK(BM_Cosine<vlmc::kernels::cosine_scores_serial>)->Arg(16)->Arg(1024)->Arg(16384);
BENCHMARK(BM_Cosine<vlmc::kernels::cosine_scores_parallel>)->Arg(16)->Arg(1024)->Arg(16384);

BENCHMARK_MAIN();
