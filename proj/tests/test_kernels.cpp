#include <doctest.h>

#include <cstring>
#include <random>
#include <vector>

#include "vlmc/hashing.hpp"
#include "vlmc/kernels.hpp"

using namespace vlmc;
using kernels::kTrigramDim;

// Constants below come from tests/oracles/trigram_oracle.py.

TEST_CASE("hash constants") {
  static_assert(fnv1a64("") == 0xCBF29CE484222325ULL);
  CHECK(fnv1a64("abc") == 0xe71fa2190541574bULL);
  CHECK(fnv1a64(" no") % 1024 == 740);
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("seed derivation is stable") {
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(unit_interval(0) == 0.0);
  CHECK(unit_interval(~0ULL) < 1.0);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) CHECK(uniform_below(rng, 7) < 7);
}

TEST_CASE("trigram embedding matches oracle buckets") {
  std::vector<double> v(kTrigramDim);
  kernels::trigram_embed_one("grass", v);
  std::vector<std::size_t> nonzero;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0) nonzero.push_back(i);
  }
  CHECK(nonzero == std::vector<std::size_t>{90, 93, 153, 270, 647});
  CHECK(kernels::norm(v) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<double> zero(kTrigramDim, 7.0);
  kernels::trigram_embed_one("", zero);
  CHECK(kernels::norm(zero) == 0.0);
}

TEST_CASE("dot and norm") {
  const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  CHECK(kernels::dot(a, b) == 32.0);
  CHECK(kernels::dot(a, b) / (kernels::norm(a) * kernels::norm(b)) == doctest::Approx(0.974631846197).epsilon(1e-12));
}

namespace {

std::vector<std::string> random_texts(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::string alphabet = "abcdefgh ijk.LMN  ";
  std::vector<std::string> texts(n);
  for (auto& t : texts) {
    const auto len = rng() % 20;
    for (std::size_t i = 0; i < len; ++i) t.push_back(alphabet[rng() % alphabet.size()]);
  }
  return texts;
}

}  // namespace

TEST_CASE("parallel kernels agree with serial reference bit for bit") {
  for (std::size_t n : {1u, 5u, 63u, 64u, 500u}) {
    const auto texts = random_texts(n, n);
    std::vector<double> s(n * kTrigramDim), p(n * kTrigramDim);
    kernels::trigram_embed_serial(texts, s);
    kernels::trigram_embed_parallel(texts, p);
    CHECK(std::memcmp(s.data(), p.data(), s.size() * sizeof(double)) == 0);

    std::vector<double> q(kTrigramDim);
    kernels::trigram_embed_one("abc de", q);
    std::vector<double> cs(n), cp(n);
    kernels::cosine_scores_serial(q, s, cs);
    kernels::cosine_scores_parallel(q, s, cp);
    CHECK(std::memcmp(cs.data(), cp.data(), cs.size() * sizeof(double)) == 0);
    for (double c : cs) {
      CHECK(c >= -1.0);
      CHECK(c <= 1.0);
    }
  }
  CHECK(kernels::max_threads() >= 1);
}

TEST_CASE("cosine scores: zero rows score -1") {
  std::vector<double> rows(2 * kTrigramDim, 0.0);
  std::vector<double> q(kTrigramDim);
  kernels::trigram_embed_one("grass", q);
  kernels::trigram_embed_one("grass", std::span<double>(rows).subspan(kTrigramDim));
  std::vector<double> out(2);
  kernels::cosine_scores_serial(q, rows, out);
  CHECK(out[0] == -1.0);
  CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-12));
}
