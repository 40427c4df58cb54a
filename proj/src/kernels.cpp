#include "vlmc/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "vlmc/core.hpp"
#include "vlmc/hashing.hpp"

namespace vlmc::kernels {

namespace {

// Below this many rows the parallel region costs more than it saves.
constexpr std::ptrdiff_t kParallelCutoff = 64;

double cosine_row(std::span<const double> query, double query_norm, std::span<const double> row) {
  const double row_norm = norm(row);
  if (query_norm == 0.0 || row_norm == 0.0) return -1.0;
  return std::clamp(dot(query, row) / (query_norm * row_norm), -1.0, 1.0);
}

}  // namespace

void trigram_embed_one(std::string_view normalized, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  if (normalized.empty()) return;
  std::string padded;
  padded.reserve(normalized.size() + 2);
  padded.push_back(' ');
  padded.append(normalized);
  padded.push_back(' ');
  const std::string_view view(padded);
  for (std::size_t i = 0; i + 3 <= view.size(); ++i) {
    out[fnv1a64(view.substr(i, 3)) % kTrigramDim] += 1.0;
  }
  const double n = norm(out);
  for (double& x : out) x /= n;
}

void trigram_embed_serial(std::span<const std::string> texts, std::span<double> out) {
  for (std::size_t i = 0; i < texts.size(); ++i) {
    trigram_embed_one(normalize_text(texts[i]).value(), out.subspan(i * kTrigramDim, kTrigramDim));
  }
}

void trigram_embed_parallel(std::span<const std::string> texts, std::span<double> out) {
  const auto n = static_cast<std::ptrdiff_t>(texts.size());
#pragma omp parallel for schedule(static) if (n >= kParallelCutoff)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto row = static_cast<std::size_t>(i);
    trigram_embed_one(normalize_text(texts[row]).value(), out.subspan(row * kTrigramDim, kTrigramDim));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void cosine_scores_serial(std::span<const double> query, std::span<const double> candidates,
                          std::span<double> out) {
  const std::size_t dim = query.size();
  const double qn = norm(query);
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r] = cosine_row(query, qn, candidates.subspan(r * dim, dim));
  }
}

void cosine_scores_parallel(std::span<const double> query, std::span<const double> candidates,
                            std::span<double> out) {
  const std::size_t dim = query.size();
  const double qn = norm(query);
  const auto n = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel for schedule(static) if (n >= kParallelCutoff)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    const auto row = static_cast<std::size_t>(r);
    out[row] = cosine_row(query, qn, candidates.subspan(row * dim, dim));
  }
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace vlmc::kernels
