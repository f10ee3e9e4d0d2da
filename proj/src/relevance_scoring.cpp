#include "caire/relevance_scoring.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "caire/error.hpp"
#include "parallel.hpp"

namespace caire {

std::string_view to_string(ScoringMode m) { return m == ScoringMode::kNumerical ? "numerical" : "loglik"; }

void Rubric::validate() const {
  for (int k = 0; k < kScoreLevels; ++k)
    if (entries[k].level.empty() || entries[k].description.empty())
      throw Error(ErrorCode::kInvalidArgument, "rubric entry " + std::to_string(k + 1) + " is incomplete");
}

const Rubric& default_rubric() {
  static const Rubric rubric{
      "cultural-relevance/1",
      {{
          {"Not Relevant", "The content does not connect with or reflect the target culture at all."},
          {"Minimally Relevant",
           "The content shows slight or superficial connections to the culture but lacks depth. May include vague "
           "references or isolated cultural elements that feel out of place or underdeveloped."},
          {"Somewhat Relevant",
           "The content contains identifiable cultural references, but they may feel generic, inconsistent, or "
           "limited in scope. The connection to the culture is present but could be stronger or more meaningful."},
          {"Relevant",
           "The content reflects a reasonable understanding of the culture, including accurate and appropriate "
           "references. It integrates cultural aspects well, though there may still be areas where more depth could "
           "be added."},
          {"Highly Relevant",
           "The content is deeply connected to the target culture, showing an immersive, accurate, and respectful "
           "understanding. Cultural references feel natural, meaningful, and central to the content."},
      }}};
  return rubric;
}

void AttributionRequest::validate() const {
  if (culture_labels.empty()) throw Error(ErrorCode::kInvalidArgument, "culture_labels must not be empty");
  for (const auto& c : culture_labels)
    if (c.find_first_not_of(" \t\r\n") == std::string::npos)
      throw Error(ErrorCode::kInvalidArgument, "culture label is blank");
  if (mode == ScoringMode::kLoglik && !debias)
    throw Error(ErrorCode::kInvalidArgument, "loglik scoring requires debias parameters");
}

std::string compose_prompt(const ScoringContext& context, std::string_view culture, const Rubric& rubric,
                           std::string_view entity_name) {
  rubric.validate();
  const std::string_view entity = entity_name.empty() ? std::string_view("(not identified)") : entity_name;
  const std::string_view info =
      context.context_text.empty() ? std::string_view("(no description available)") : context.context_text;

  std::ostringstream p;
  p << "We want to assess how relevant an image is to a given culture.\n"
    << kEntityMarker << entity << ".\n"
    << "Here is some detailed information about this concept from Wikipedia: " << info << ".\n\n"
    << "Using the above context, assign a score from 1 to 5 " << kTargetMarker << culture << ":\n"
    << "Think step by step, specifically considering cultural symbols, styles, traditions, or any features that "
       "align with the culture of "
    << culture << ".\n\n"
    << "The final score should be a number between 1 to 5, where the meaning of each score is defined as follows:\n";
  for (int k = 0; k < kScoreLevels; ++k)
    p << "- " << (k + 1) << " -- " << rubric.entries[k].level << ": " << rubric.entries[k].description << '\n';
  p << "\nThe output should be a single number ONLY.";
  return p.str();
}

static Provenance make_provenance(const AttributionRequest& request, const ScorerBackend& backend,
                                  std::string strategy) {
  Provenance prov;
  prov.strategy = std::move(strategy);
  prov.context_mode = std::string(to_string(request.context.mode));
  prov.context_source = request.context.source_field;
  prov.source_entities = request.context.source_entities;
  prov.backend_id = backend.id();
  prov.warnings = request.context.warnings;
  return prov;
}

CultureScore score_numerical(ScorerBackend& backend, const AttributionRequest& request, std::string_view culture,
                             const Rubric& rubric) {
  if (request.mode != ScoringMode::kNumerical)
    throw Error(ErrorCode::kInvalidArgument, "score_numerical needs a numerical-mode request");
  BackendRequest br;
  br.mode = BackendMode::kDistribution;
  br.prompt = compose_prompt(request.context, culture, rubric, request.entity_name);
  br.image = request.image;
  br.request_id = request.query_id + "/" + std::string(culture) + "/score";
  const BackendResponse response = backend.query(br);
  validate_response(br, response);

  CultureScore s;
  s.culture_label = std::string(culture);
  s.score = response.probs->argmax();
  s.raw = *response.probs;
  s.provenance = make_provenance(request, backend, "");
  if (!response.backend_id.empty()) s.provenance.backend_id = response.backend_id;
  return s;
}

double completion_nll(ScorerBackend& backend, std::string_view context_docs, const std::optional<ImagePayload>& image,
                      std::string_view culture, const std::string& request_id) {
  BackendRequest br;
  br.mode = BackendMode::kNll;
  br.prompt = std::string(context_docs);
  br.image = image;
  br.completion = std::string(kCompletionPrefix) + std::string(culture);
  br.request_id = request_id;
  const BackendResponse response = backend.query(br);
  validate_response(br, response);
  return *response.nll;
}

double debias(double raw_nll, double base_nll, const DebiasParams& params) {
  if (!std::isfinite(raw_nll) || !std::isfinite(base_nll) || !std::isfinite(params.lambda) ||
      !std::isfinite(params.floor))
    throw Error(ErrorCode::kInvalidArgument, "debias inputs must be finite");
  if (params.lambda < 0.0) throw Error(ErrorCode::kInvalidArgument, "debias lambda must be non-negative");
  return raw_nll - params.lambda * std::max(base_nll, params.floor);
}

std::map<std::string, int> loglik_to_score(const std::map<std::string, double>& debiased_values) {
  std::map<std::string, int> out;
  if (debiased_values.empty()) return out;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& [c, v] : debiased_values) {
    lo = std::min(lo, -v);
    hi = std::max(hi, -v);
  }
  const double spread = hi - lo;
  for (const auto& [c, v] : debiased_values) {
    if (!(spread > 0.0)) {
      out[c] = 3;
      continue;
    }
    const double u = (-v - lo) / spread;
    out[c] = std::clamp(1 + static_cast<int>(std::floor(u * kScoreLevels)), 1, kScoreLevels);
  }
  return out;
}

std::vector<CultureScore> score_request(ScorerBackend& backend, const AttributionRequest& request,
                                        const Rubric& rubric, unsigned parallelism) {
  request.validate();
  const auto& cultures = request.culture_labels;
  std::vector<CultureScore> scores(cultures.size());

  if (request.mode == ScoringMode::kNumerical) {
    detail::parallel_for(cultures.size(), parallelism,
                         [&](std::size_t i) { scores[i] = score_numerical(backend, request, cultures[i], rubric); });
    return scores;
  }

  std::vector<LoglikRaw> raw(cultures.size());
  detail::parallel_for(cultures.size(), parallelism, [&](std::size_t i) {
    const std::string base_id = request.query_id + "/" + cultures[i];
    raw[i].raw_nll = completion_nll(backend, request.context.context_text, request.image, cultures[i], base_id + "/nll");
    raw[i].base_nll = completion_nll(backend, "", std::nullopt, cultures[i], base_id + "/base");
    raw[i].debiased = debias(raw[i].raw_nll, raw[i].base_nll, *request.debias);
  });
  std::map<std::string, double> debiased;
  for (std::size_t i = 0; i < cultures.size(); ++i) debiased[cultures[i]] = raw[i].debiased;
  const auto bucketed = loglik_to_score(debiased);
  for (std::size_t i = 0; i < cultures.size(); ++i) {
    scores[i].culture_label = cultures[i];
    scores[i].score = bucketed.at(cultures[i]);
    scores[i].raw = raw[i];
    scores[i].provenance = make_provenance(request, backend, "");
  }
  return scores;
}

AttributionResult attribute_image(const KnowledgeBase& kb, const KbIndices& indices, ScorerBackend& backend,
                                  std::span<const float> image_embedding, const std::optional<ImagePayload>& image,
                                  const std::vector<std::string>& cultures, const AttributionConfig& config,
                                  const std::string& query_id, const std::optional<GoldContext>& gold) {
  AttributionRequest request;
  request.query_id = query_id;
  request.image = image;
  request.culture_labels = cultures;
  request.mode = config.scoring_mode;
  if (config.scoring_mode == ScoringMode::kLoglik) request.debias = config.debias;
  request.validate();

  AttributionResult result;
  std::string strategy = "none";
  if (gold) {
    request.context = gold_context(gold->text, gold->source_entities, config.budget);
    request.entity_name = gold->entity_name;
    strategy = "gold";
  } else if (config.context_mode == ContextMode::kNone) {
    request.context = ScoringContext{ContextMode::kNone, {}, {}, false, "none", {}};
  } else {
    if (config.context_mode == ContextMode::kGoldOverride)
      throw Error(ErrorCode::kInvalidArgument, "gold_override context requires a gold entry").with_stage("context");
    CandidateSet candidates;
    try {
      result.link = link(image_embedding, kb, indices, config.strategy, config.k, &candidates);
    } catch (const Error& e) {
      throw e.with_stage("vel");
    }
    try {
      request.context = build_context(*result.link, candidates, kb, config.context_mode, config.budget);
      request.entity_name = kb.get_entity(result.link->selected).lemma;
    } catch (const Error& e) {
      throw e.with_stage("context");
    }
    strategy = std::string(to_string(config.strategy));
  }

  try {
    result.scores = score_request(backend, request, default_rubric(), config.parallelism);
  } catch (const Error& e) {
    throw e.with_stage("scoring");
  }
  for (auto& s : result.scores) {
    s.provenance.strategy = strategy;
    if (result.link)
      s.provenance.warnings.insert(s.provenance.warnings.begin(), result.link->warnings.begin(),
                                   result.link->warnings.end());
  }
  return result;
}

}  // namespace caire
