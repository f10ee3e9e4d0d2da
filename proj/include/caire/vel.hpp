#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "caire/kb_store.hpp"
#include "caire/vector_index.hpp"

namespace caire {

inline constexpr std::size_t kDefaultTopK = 20;
inline constexpr std::size_t kDefaultContextBudget = 12'000;
inline constexpr std::size_t kMaxTitles = 20;

enum class LinkStrategy {
  kLemmaVT,      // image-to-image retrieval, rerank by image-to-lemma similarity
  kGlossVT,      // same, with gloss embeddings
  kFrequencyVT,  // image-to-image retrieval, rank by ownership count
  kLemmaT,       // direct image-to-text retrieval against lemma embeddings
  kGlossT,
  kArticleT,
};

std::string_view to_string(LinkStrategy s);
std::optional<LinkStrategy> parse_link_strategy(std::string_view name);

// Image index plus one text index per field that has at least one row.
class KbIndices {
 public:
  explicit KbIndices(const KnowledgeBase& kb);

  const VectorIndex& image() const noexcept { return image_; }
  // nullptr when no entity has an embedding for `field`.
  const VectorIndex* text(TextField field) const;

 private:
  VectorIndex image_;
  std::map<TextField, VectorIndex> text_;
};

struct CandidateEntity {
  std::string entity_id;
  double best_similarity = 0.0;
  std::size_t frequency = 0;

  bool operator==(const CandidateEntity&) const = default;
};

struct CandidateSet {
  std::string query_id;
  std::vector<SearchHit> hits;
  // First-appearance order over hits (and over owners within a hit).
  std::vector<CandidateEntity> unique_entities;
};

struct RankedEntity {
  std::string entity_id;
  double score = 0.0;

  bool operator==(const RankedEntity&) const = default;
};

struct LinkResult {
  std::vector<RankedEntity> ranked_entities;
  std::string selected;
  LinkStrategy strategy = LinkStrategy::kLemmaVT;
  std::vector<std::string> warnings;
};

enum class ContextMode { kWikiFull, kTop20Titles, kGoldOverride, kNone };

std::string_view to_string(ContextMode m);

struct ScoringContext {
  ContextMode mode = ContextMode::kWikiFull;
  std::string context_text;
  std::vector<std::string> source_entities;
  bool truncated = false;
  // Which text field fed the context ("article", "gloss", "lemma", "titles",
  // "gold", "none").
  std::string source_field;
  std::vector<std::string> warnings;
};

// Groups hits into unique entities. Exposed separately from retrieval so
// callers holding hits from elsewhere can reuse the aggregation rule.
std::vector<CandidateEntity> aggregate_candidates(std::span<const SearchHit> hits);

CandidateSet retrieve_candidates(std::span<const float> image_embedding, const VectorIndex& image_index,
                                 std::size_t k = kDefaultTopK, std::string query_id = {});

// Reranks the candidate neighbourhood. Valid strategies: kLemmaVT, kGlossVT,
// kFrequencyVT.
LinkResult disambiguate(std::span<const float> image_embedding, const CandidateSet& candidates,
                        const KnowledgeBase& kb, LinkStrategy strategy);

// Top-k entities by image-to-text similarity on one field, no image step.
LinkResult link_direct_text(std::span<const float> image_embedding, const KbIndices& indices, TextField field,
                            std::size_t k = kDefaultTopK);

// Dispatches to disambiguate or link_direct_text depending on strategy.
LinkResult link(std::span<const float> image_embedding, const KnowledgeBase& kb, const KbIndices& indices,
                LinkStrategy strategy, std::size_t k, CandidateSet* candidates_out = nullptr);

ScoringContext build_context(const LinkResult& link, const CandidateSet& candidates, const KnowledgeBase& kb,
                             ContextMode mode, std::size_t budget = kDefaultContextBudget);

// Context built from externally supplied text (ground-truth article).
ScoringContext gold_context(std::string text, std::vector<std::string> source_entities,
                            std::size_t budget = kDefaultContextBudget);

}  // namespace caire
