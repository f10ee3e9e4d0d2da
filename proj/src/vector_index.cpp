#include "caire/vector_index.hpp"

#include <algorithm>
#include <thread>

#include "caire/error.hpp"

namespace caire {

double cosine(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size())
    throw Error(ErrorCode::kDimensionMismatch,
                "cosine: dimension " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += static_cast<double>(u[i]) * static_cast<double>(v[i]);
  return acc;
}

VectorIndex::VectorIndex(std::shared_ptr<const EmbeddingMatrix> matrix, std::vector<std::vector<std::string>> owners)
    : matrix_(std::move(matrix)), owners_(std::move(owners)) {
  if (!matrix_ || matrix_->empty()) throw Error(ErrorCode::kEmpty, "cannot build an index over an empty matrix");
  if (!owners_.empty() && owners_.size() != matrix_->rows())
    throw Error(ErrorCode::kInvalidArgument, "owner table size does not match row count");
}

namespace {

struct Scored {
  double sim;
  std::size_t row;
};

bool scored_before(const Scored& a, const Scored& b) { return hit_before(a.sim, a.row, b.sim, b.row); }

// Top-k of rows [begin, end), sorted.
std::vector<Scored> scan_chunk(const EmbeddingMatrix& m, std::span<const float> q, std::size_t begin, std::size_t end,
                               std::size_t k) {
  std::vector<Scored> all;
  all.reserve(end - begin);
  for (std::size_t r = begin; r < end; ++r) all.push_back({cosine(m.row(r), q), r});
  const std::size_t keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), scored_before);
  all.resize(keep);
  return all;
}

}  // namespace

std::vector<SearchHit> VectorIndex::search_topk(std::span<const float> query, std::size_t k, unsigned threads) const {
  if (query.size() != matrix_->dimension())
    throw Error(ErrorCode::kDimensionMismatch, "query dimension " + std::to_string(query.size()) +
                                                   " does not match index dimension " +
                                                   std::to_string(matrix_->dimension()));
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");

  const std::size_t n = matrix_->rows();
  const std::size_t chunks = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, n / 1024));
  std::vector<Scored> merged;
  if (chunks == 1) {
    merged = scan_chunk(*matrix_, query, 0, n, k);
  } else {
    std::vector<std::vector<Scored>> parts(chunks);
    {
      std::vector<std::jthread> workers;
      for (std::size_t c = 0; c < chunks; ++c) {
        workers.emplace_back([&, c] {
          const std::size_t begin = n * c / chunks;
          const std::size_t end = n * (c + 1) / chunks;
          parts[c] = scan_chunk(*matrix_, query, begin, end, k);
        });
      }
    }
    for (auto& p : parts) merged.insert(merged.end(), p.begin(), p.end());
    const std::size_t keep = std::min(k, merged.size());
    std::partial_sort(merged.begin(), merged.begin() + static_cast<std::ptrdiff_t>(keep), merged.end(),
                      scored_before);
    merged.resize(keep);
  }

  std::vector<SearchHit> hits;
  hits.reserve(merged.size());
  for (const auto& s : merged) {
    SearchHit h{s.row, s.sim, {}};
    if (!owners_.empty()) h.entity_ids = owners_[s.row];
    hits.push_back(std::move(h));
  }
  return hits;
}

VectorIndex build_index(const EmbeddingMatrix& matrix, std::vector<std::vector<std::string>> owners) {
  return VectorIndex(std::make_shared<const EmbeddingMatrix>(matrix), std::move(owners));
}

VectorIndex build_image_index(const KnowledgeBase& kb) {
  std::vector<std::vector<std::string>> owners(kb.image_matrix().rows());
  for (std::size_t r = 0; r < owners.size(); ++r) owners[r] = kb.image_row_owners(r);
  return build_index(kb.image_matrix(), std::move(owners));
}

}  // namespace caire
