#include "caire/vel.hpp"

#include <algorithm>
#include <unordered_map>

#include "caire/error.hpp"

namespace caire {

std::string_view to_string(LinkStrategy s) {
  switch (s) {
    case LinkStrategy::kLemmaVT: return "lemma_vt";
    case LinkStrategy::kGlossVT: return "gloss_vt";
    case LinkStrategy::kFrequencyVT: return "frequency_vt";
    case LinkStrategy::kLemmaT: return "lemma_t";
    case LinkStrategy::kGlossT: return "gloss_t";
    case LinkStrategy::kArticleT: return "article_t";
  }
  return "unknown";
}

std::optional<LinkStrategy> parse_link_strategy(std::string_view name) {
  for (auto s : {LinkStrategy::kLemmaVT, LinkStrategy::kGlossVT, LinkStrategy::kFrequencyVT, LinkStrategy::kLemmaT,
                 LinkStrategy::kGlossT, LinkStrategy::kArticleT})
    if (to_string(s) == name) return s;
  return std::nullopt;
}

std::string_view to_string(ContextMode m) {
  switch (m) {
    case ContextMode::kWikiFull: return "wiki_full";
    case ContextMode::kTop20Titles: return "top20_titles";
    case ContextMode::kGoldOverride: return "gold_override";
    case ContextMode::kNone: return "none";
  }
  return "unknown";
}

// --- indices ----------------------------------------------------------------

static VectorIndex build_field_index(const KnowledgeBase& kb, TextField field) {
  const auto dim = kb.dimension();
  std::vector<float> data;
  std::vector<std::vector<std::string>> owners;
  for (const auto& e : kb.entities()) {
    auto v = kb.text_embedding(e, field);
    if (v.empty()) continue;
    data.insert(data.end(), v.begin(), v.end());
    owners.push_back({e.entity_id});
  }
  return VectorIndex(std::make_shared<const EmbeddingMatrix>(dim, std::move(data)), std::move(owners));
}

KbIndices::KbIndices(const KnowledgeBase& kb) : image_(build_image_index(kb)) {
  for (auto field : {TextField::kLemma, TextField::kGloss, TextField::kArticle}) {
    const bool any = std::any_of(kb.entities().begin(), kb.entities().end(),
                                 [&](const EntityRecord& e) { return e.text_embedding_rows.contains(field); });
    if (any) text_.emplace(field, build_field_index(kb, field));
  }
}

const VectorIndex* KbIndices::text(TextField field) const {
  auto it = text_.find(field);
  return it == text_.end() ? nullptr : &it->second;
}

// --- retrieval --------------------------------------------------------------

std::vector<CandidateEntity> aggregate_candidates(std::span<const SearchHit> hits) {
  std::vector<CandidateEntity> out;
  std::unordered_map<std::string, std::size_t> slot;
  for (const auto& hit : hits) {
    for (const auto& id : hit.entity_ids) {
      auto [it, inserted] = slot.emplace(id, out.size());
      if (inserted) {
        out.push_back({id, hit.similarity, 1});
      } else {
        auto& c = out[it->second];
        c.best_similarity = std::max(c.best_similarity, hit.similarity);
        ++c.frequency;
      }
    }
  }
  return out;
}

CandidateSet retrieve_candidates(std::span<const float> image_embedding, const VectorIndex& image_index, std::size_t k,
                                 std::string query_id) {
  CandidateSet c;
  c.query_id = std::move(query_id);
  c.hits = image_index.search_topk(image_embedding, k);
  c.unique_entities = aggregate_candidates(c.hits);
  return c;
}

// --- disambiguation ---------------------------------------------------------

static void sort_ranked(std::vector<RankedEntity>& ranked) {
  std::sort(ranked.begin(), ranked.end(), [](const RankedEntity& a, const RankedEntity& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.entity_id < b.entity_id;
  });
}

LinkResult disambiguate(std::span<const float> image_embedding, const CandidateSet& candidates,
                        const KnowledgeBase& kb, LinkStrategy strategy) {
  if (candidates.unique_entities.empty()) throw Error(ErrorCode::kEmpty, "candidate set is empty");

  LinkResult result;
  result.strategy = strategy;

  switch (strategy) {
    case LinkStrategy::kLemmaVT:
    case LinkStrategy::kGlossVT: {
      const TextField field = strategy == LinkStrategy::kLemmaVT ? TextField::kLemma : TextField::kGloss;
      for (const auto& c : candidates.unique_entities) {
        const auto& entity = kb.get_entity(c.entity_id);
        auto text = kb.text_embedding(entity, field);
        if (text.empty()) {
          result.warnings.push_back("entity '" + c.entity_id + "' has no " + std::string(to_string(field)) +
                                    " embedding; skipped");
          continue;
        }
        result.ranked_entities.push_back({c.entity_id, cosine(image_embedding, text)});
      }
      if (result.ranked_entities.empty())
        throw Error(ErrorCode::kNotFound,
                    "no candidate has a " + std::string(to_string(field)) + " embedding for " + std::string(to_string(strategy)));
      sort_ranked(result.ranked_entities);
      break;
    }
    case LinkStrategy::kFrequencyVT: {
      std::vector<const CandidateEntity*> order;
      for (const auto& c : candidates.unique_entities) order.push_back(&c);
      std::sort(order.begin(), order.end(), [](const CandidateEntity* a, const CandidateEntity* b) {
        if (a->frequency != b->frequency) return a->frequency > b->frequency;
        if (a->best_similarity != b->best_similarity) return a->best_similarity > b->best_similarity;
        return a->entity_id < b->entity_id;
      });
      for (const auto* c : order) result.ranked_entities.push_back({c->entity_id, static_cast<double>(c->frequency)});
      break;
    }
    default:
      throw Error(ErrorCode::kInvalidArgument,
                  "disambiguate does not handle strategy " + std::string(to_string(strategy)));
  }
  result.selected = result.ranked_entities.front().entity_id;
  return result;
}

LinkResult link_direct_text(std::span<const float> image_embedding, const KbIndices& indices, TextField field,
                            std::size_t k) {
  const VectorIndex* index = indices.text(field);
  if (!index) throw Error(ErrorCode::kNotFound, "no text index for field " + std::string(to_string(field)));

  LinkResult result;
  result.strategy = field == TextField::kLemma   ? LinkStrategy::kLemmaT
                    : field == TextField::kGloss ? LinkStrategy::kGlossT
                                                 : LinkStrategy::kArticleT;
  // One row per entity per field, so k rows yield at most k entities.
  for (const auto& hit : index->search_topk(image_embedding, k)) {
    for (const auto& id : hit.entity_ids) result.ranked_entities.push_back({id, hit.similarity});
  }
  sort_ranked(result.ranked_entities);
  result.selected = result.ranked_entities.front().entity_id;
  return result;
}

LinkResult link(std::span<const float> image_embedding, const KnowledgeBase& kb, const KbIndices& indices,
                LinkStrategy strategy, std::size_t k, CandidateSet* candidates_out) {
  CandidateSet candidates = retrieve_candidates(image_embedding, indices.image(), k);
  LinkResult result;
  switch (strategy) {
    case LinkStrategy::kLemmaT: result = link_direct_text(image_embedding, indices, TextField::kLemma, k); break;
    case LinkStrategy::kGlossT: result = link_direct_text(image_embedding, indices, TextField::kGloss, k); break;
    case LinkStrategy::kArticleT: result = link_direct_text(image_embedding, indices, TextField::kArticle, k); break;
    default: result = disambiguate(image_embedding, candidates, kb, strategy); break;
  }
  if (candidates_out) *candidates_out = std::move(candidates);
  return result;
}

// --- context ----------------------------------------------------------------

static std::string head_truncate(std::string text, std::size_t budget, bool& truncated) {
  truncated = text.size() > budget;
  if (!truncated) return text;
  std::size_t cut = budget;
  // Do not split a UTF-8 sequence.
  while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
  text.resize(cut);
  return text;
}

ScoringContext build_context(const LinkResult& link, const CandidateSet& candidates, const KnowledgeBase& kb,
                             ContextMode mode, std::size_t budget) {
  ScoringContext ctx;
  ctx.mode = mode;
  switch (mode) {
    case ContextMode::kWikiFull: {
      const auto& e = kb.get_entity(link.selected);
      ctx.source_entities = {e.entity_id};
      std::string text;
      if (!e.article_text.empty()) {
        text = e.article_text;
        ctx.source_field = "article";
      } else if (!e.gloss.empty()) {
        text = e.gloss;
        ctx.source_field = "gloss";
        ctx.warnings.push_back("entity '" + e.entity_id + "' has no article text; using gloss");
      } else {
        text = e.lemma;
        ctx.source_field = "lemma";
        ctx.warnings.push_back("entity '" + e.entity_id + "' has no article text or gloss; using lemma");
      }
      ctx.context_text = head_truncate(std::move(text), budget, ctx.truncated);
      break;
    }
    case ContextMode::kTop20Titles: {
      ctx.source_field = "titles";
      std::string text;
      for (const auto& c : candidates.unique_entities) {
        if (ctx.source_entities.size() == kMaxTitles) break;
        const auto& e = kb.get_entity(c.entity_id);
        if (!text.empty()) text += '\n';
        text += e.lemma;
        ctx.source_entities.push_back(e.entity_id);
      }
      ctx.context_text = head_truncate(std::move(text), budget, ctx.truncated);
      break;
    }
    case ContextMode::kGoldOverride:
      throw Error(ErrorCode::kInvalidArgument, "gold_override context is supplied externally; use gold_context()");
    case ContextMode::kNone:
      ctx.source_field = "none";
      break;
  }
  return ctx;
}

ScoringContext gold_context(std::string text, std::vector<std::string> source_entities, std::size_t budget) {
  ScoringContext ctx;
  ctx.mode = ContextMode::kGoldOverride;
  ctx.source_field = "gold";
  ctx.source_entities = std::move(source_entities);
  ctx.context_text = head_truncate(std::move(text), budget, ctx.truncated);
  return ctx;
}

}  // namespace caire
