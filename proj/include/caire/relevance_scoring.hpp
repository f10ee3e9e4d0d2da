#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "caire/kb_store.hpp"
#include "caire/scorer_backend.hpp"
#include "caire/vel.hpp"

namespace caire {

struct RubricEntry {
  std::string level;
  std::string description;
};

struct Rubric {
  std::string version;
  std::array<RubricEntry, kScoreLevels> entries;  // index 0 is score 1

  void validate() const;
};

// The five-level cultural relevance rubric, Not Relevant to Highly Relevant.
const Rubric& default_rubric();

enum class ScoringMode { kNumerical, kLoglik };
std::string_view to_string(ScoringMode m);

struct DebiasParams {
  double lambda = 1.0;
  double floor = 0.0;  // cap applied to the base-rate NLL before scaling
};

struct AttributionRequest {
  std::string query_id;
  std::optional<ImagePayload> image;
  std::vector<std::string> culture_labels;
  ScoringContext context;
  std::string entity_name;
  ScoringMode mode = ScoringMode::kNumerical;
  std::optional<DebiasParams> debias;

  void validate() const;
};

struct LoglikRaw {
  double raw_nll = 0.0;
  double base_nll = 0.0;
  double debiased = 0.0;
};

struct Provenance {
  std::string strategy;
  std::string context_mode;
  std::string context_source;
  std::vector<std::string> source_entities;
  std::string backend_id;
  std::vector<std::string> warnings;
};

struct CultureScore {
  std::string culture_label;
  int score = 0;
  std::variant<ScoreDistribution, LoglikRaw> raw;
  Provenance provenance;
};

std::string compose_prompt(const ScoringContext& context, std::string_view culture, const Rubric& rubric,
                           std::string_view entity_name);

// Argmax over the backend's constrained five-token distribution.
CultureScore score_numerical(ScorerBackend& backend, const AttributionRequest& request, std::string_view culture,
                             const Rubric& rubric = default_rubric());

// -log P("This text is relevant to <culture>" | docs, image). Empty docs
// and no image give the prompt-only base rate.
double completion_nll(ScorerBackend& backend, std::string_view context_docs, const std::optional<ImagePayload>& image,
                      std::string_view culture, const std::string& request_id);

// raw − λ·max(base, floor)
double debias(double raw_nll, double base_nll, const DebiasParams& params);

// Min-max normalizes −debiased over the culture set and buckets into five
// equal-width bins. A set with no spread maps every culture to 3.
std::map<std::string, int> loglik_to_score(const std::map<std::string, double>& debiased_values);

// Scores every culture of a request; output order follows culture_labels.
// Cultures are scored independently, up to `parallelism` at a time.
std::vector<CultureScore> score_request(ScorerBackend& backend, const AttributionRequest& request,
                                        const Rubric& rubric = default_rubric(), unsigned parallelism = 1);

struct AttributionConfig {
  std::size_t k = kDefaultTopK;
  LinkStrategy strategy = LinkStrategy::kLemmaVT;
  ContextMode context_mode = ContextMode::kWikiFull;
  std::size_t budget = kDefaultContextBudget;
  ScoringMode scoring_mode = ScoringMode::kNumerical;
  DebiasParams debias;
  unsigned parallelism = 1;
};

struct GoldContext {
  std::string entity_name;
  std::string text;
  std::vector<std::string> source_entities;
};

struct AttributionResult {
  std::vector<CultureScore> scores;
  std::optional<LinkResult> link;
};

// retrieve → disambiguate → build context → score each culture. With a
// gold context, retrieval and linking are skipped. Errors carry a stage tag.
AttributionResult attribute_image(const KnowledgeBase& kb, const KbIndices& indices, ScorerBackend& backend,
                                  std::span<const float> image_embedding, const std::optional<ImagePayload>& image,
                                  const std::vector<std::string>& cultures, const AttributionConfig& config,
                                  const std::string& query_id = {}, const std::optional<GoldContext>& gold = {});

}  // namespace caire
