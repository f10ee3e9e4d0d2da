#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "caire/kb_store.hpp"

namespace caire {

// Dot product of two unit vectors. float32 inputs are widened to double and
// summed in index order, so results are reproducible bit-for-bit.
double cosine(std::span<const float> u, std::span<const float> v);

struct SearchHit {
  std::size_t row_index = 0;
  double similarity = 0.0;
  std::vector<std::string> entity_ids;

  bool operator==(const SearchHit&) const = default;
};

// Total order used for every ranked list of rows: similarity descending,
// then row index ascending.
inline bool hit_before(double sim_a, std::size_t row_a, double sim_b, std::size_t row_b) {
  if (sim_a != sim_b) return sim_a > sim_b;
  return row_a < row_b;
}

// Exact flat index. Holds a shared reference to the matrix so the index can
// outlive the object that built it.
class VectorIndex {
 public:
  // `owners[r]` lists the entities owning row r; may be empty for an
  // anonymous index (hits then carry no entity ids).
  VectorIndex(std::shared_ptr<const EmbeddingMatrix> matrix, std::vector<std::vector<std::string>> owners = {});

  std::size_t rows() const noexcept { return matrix_->rows(); }
  std::uint32_t dimension() const noexcept { return matrix_->dimension(); }
  const EmbeddingMatrix& matrix() const noexcept { return *matrix_; }

  // Returns min(k, rows) hits. `threads` > 1 splits the scan into row
  // chunks; the merged result is identical to the single-threaded one.
  std::vector<SearchHit> search_topk(std::span<const float> query, std::size_t k, unsigned threads = 1) const;

 private:
  std::shared_ptr<const EmbeddingMatrix> matrix_;
  std::vector<std::vector<std::string>> owners_;
};

// Index over the KB image matrix with row owners attached. Copies the
// matrix; the KB stays untouched.
VectorIndex build_index(const EmbeddingMatrix& matrix, std::vector<std::vector<std::string>> owners = {});
VectorIndex build_image_index(const KnowledgeBase& kb);

}  // namespace caire
