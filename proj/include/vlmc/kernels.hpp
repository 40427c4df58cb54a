#pragma once

// Data-parallel numeric kernels behind the fallback embedder and the
// similarity scorer. Every kernel has a serial reference and an OpenMP
// version; the two must agree bit for bit (each output element is computed
// by the same sequential arithmetic, only the assignment of elements to
// threads differs).

#include <cstddef>
#include <span>
#include <string>
#include <string_view>

namespace vlmc::kernels {

inline constexpr std::size_t kTrigramDim = 1024;

// Writes the L2-normalized hashed-trigram vector of one already-normalized
// string into out (size kTrigramDim). Empty input yields the zero vector.
void trigram_embed_one(std::string_view normalized, std::span<double> out);

// Row-major batch: out.size() == texts.size() * kTrigramDim. Inputs are
// normalized by the kernel.
void trigram_embed_serial(std::span<const std::string> texts, std::span<double> out);
void trigram_embed_parallel(std::span<const std::string> texts, std::span<double> out);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

// Cosine of query against each row of candidates (row-major, dim ==
// query.size()). Rows or queries with zero norm score -1.
void cosine_scores_serial(std::span<const double> query, std::span<const double> candidates,
                          std::span<double> out);
void cosine_scores_parallel(std::span<const double> query, std::span<const double> candidates,
                            std::span<double> out);

// Number of threads the parallel kernels will use.
int max_threads();

}  // namespace vlmc::kernels
