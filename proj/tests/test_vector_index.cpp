#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "caire/error.hpp"
#include "caire/fixtures.hpp"
#include "caire/vector_index.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace caire;
using caire::testing::error_code_of;

namespace {

void check_against_oracle(const VectorIndex& index, const EmbeddingMatrix& m, std::span<const float> q, std::size_t k,
                          unsigned threads = 1) {
  const auto hits = index.search_topk(q, k, threads);
  const auto expected = oracle::brute_force_topk(m, q, k);
  REQUIRE(hits.size() == expected.size());
  for (std::size_t i = 0; i < hits.size(); ++i) {
    CHECK(hits[i].row_index == expected[i].first);
    CHECK(hits[i].similarity == expected[i].second);
  }
}

}  // namespace

TEST_CASE("cosine") {
  const std::vector<float> u = {0.6f, 0.8f}, v = {0.8f, 0.6f}, w = {-0.8f, 0.6f};
  CHECK(cosine(u, u) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(cosine(u, w) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(cosine(u, v) == doctest::Approx(0.96).epsilon(1e-6));
  const std::vector<float> three = {1, 0, 0};
  CHECK(error_code_of([&] { cosine(u, three); }) == ErrorCode::kDimensionMismatch);
}

TEST_CASE("build_index sizes") {
  std::mt19937_64 rng(11);
  CHECK(build_index(fixtures::random_matrix(rng, 1000, 64)).rows() == 1000);
  CHECK(build_index(fixtures::random_matrix(rng, 1, 64)).rows() == 1);
  CHECK(error_code_of([&] { build_index(fixtures::random_matrix(rng, 0, 64)); }) == ErrorCode::kEmpty);
}

TEST_CASE("search_topk examples") {
  std::mt19937_64 rng(12);
  const auto m = fixtures::random_matrix(rng, 1000, 64);
  const auto index = build_index(m);

  SUBCASE("self match") {
    const auto row = m.row(17);
    const std::vector<float> q(row.begin(), row.end());
    const auto hits = index.search_topk(q, 5);
    CHECK(hits.front().row_index == 17);
    CHECK(hits.front().similarity == doctest::Approx(1.0).epsilon(1e-6));
  }

  SUBCASE("k is clamped to the row count") {
    const auto small = fixtures::random_matrix(rng, 10, 64);
    const auto q = fixtures::random_unit_vector(rng, 64);
    CHECK(build_index(small).search_topk(q, 50).size() == 10);
  }

  SUBCASE("matches full scan at k=20") {
    const auto q = fixtures::random_unit_vector(rng, 64);
    check_against_oracle(index, m, q, 20);
  }

  SUBCASE("errors") {
    const std::vector<float> short_query(32, 0.1f);
    CHECK(error_code_of([&] { index.search_topk(short_query, 3); }) == ErrorCode::kDimensionMismatch);
    const auto q = fixtures::random_unit_vector(rng, 64);
    CHECK(error_code_of([&] { index.search_topk(q, 0); }) == ErrorCode::kInvalidArgument);
  }
}

TEST_CASE("ties break on ascending row index") {
  // Rows 0, 2 and 4 are identical; 1 and 3 are their negation.
  const std::vector<float> a = {0.6f, 0.8f}, b = {-0.6f, -0.8f};
  std::vector<float> data;
  for (int i = 0; i < 5; ++i) data.insert(data.end(), (i % 2 ? b : a).begin(), (i % 2 ? b : a).end());
  const EmbeddingMatrix m(2, data);
  const auto hits = build_index(m).search_topk(a, 5);
  std::vector<std::size_t> rows;
  for (const auto& h : hits) rows.push_back(h.row_index);
  CHECK(rows == std::vector<std::size_t>{0, 2, 4, 1, 3});
}

TEST_CASE("hits carry row owners") {
  const EmbeddingMatrix m(2, {1, 0, 0, 1});
  const auto index = build_index(m, {{"x"}, {"y", "z"}});
  const std::vector<float> q = {0, 1};
  const auto hits = index.search_topk(q, 2);
  CHECK(hits[0].entity_ids == std::vector<std::string>{"y", "z"});
  CHECK(hits[1].entity_ids == std::vector<std::string>{"x"});
}

TEST_CASE("property: exact, deterministic, prefix-monotone, thread-invariant") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t rows = 1 + rng() % 3000;
    const std::uint32_t dim = 1 + static_cast<std::uint32_t>(rng() % 48);
    auto m = fixtures::random_matrix(rng, rows, dim);
    // Duplicate some rows so ties actually occur.
    for (std::size_t r = 1; r < rows; r += 7) {
      const auto src = m.row(r - 1);
      std::vector<float> copy(src.begin(), src.end());
      std::copy(copy.begin(), copy.end(), m.mutable_row(r).begin());
    }
    const auto index = build_index(m);
    const auto q = fixtures::random_unit_vector(rng, dim);
    const std::size_t k = 1 + rng() % 40;

    check_against_oracle(index, m, q, k);
    check_against_oracle(index, m, q, k, 4);
    CHECK(index.search_topk(q, k) == index.search_topk(q, k));
    const auto shorter = index.search_topk(q, k);
    const auto longer = index.search_topk(q, k + 1);
    REQUIRE(longer.size() >= shorter.size());
    CHECK(std::equal(shorter.begin(), shorter.end(), longer.begin()));
  }
}
