#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "caire/kb_store.hpp"
#include "caire/scorer_backend.hpp"

// Synthetic knowledge bases with planted geometry, for tests, benchmarks and
// the `gen-fixture` command.
namespace caire::fixtures {

std::vector<float> random_unit_vector(std::mt19937_64& rng, std::uint32_t dim);
EmbeddingMatrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::uint32_t dim);

struct PlantedQuery {
  std::string query_id;
  std::vector<float> embedding;
  std::string gold_entity;
  std::string gold_culture;
};

struct PlantedFixture {
  std::vector<EntityRecord> entities;
  EmbeddingMatrix image_matrix;
  EmbeddingMatrix text_matrix;
  std::vector<std::string> cultures;
  std::map<std::string, std::string> entity_culture;
  std::vector<PlantedQuery> queries;
  PlantedTable table;
};

struct PlantedOptions {
  std::size_t entities = 50;
  std::uint32_t dimension = 64;
  std::size_t images_per_entity = 2;
  std::size_t queries = 10;
  double noise = 0.3;
  std::uint64_t seed = 7;
  std::vector<std::string> cultures = {"Ukraine", "India", "Japan", "Mexico", "Nigeria"};
};

inline constexpr ScoreDistribution kPlantedRelevant{{0.02, 0.03, 0.05, 0.15, 0.75}};
inline constexpr ScoreDistribution kPlantedIrrelevant{{0.60, 0.25, 0.10, 0.03, 0.02}};
inline constexpr double kPlantedRelevantNll = 1.0;
inline constexpr double kPlantedIrrelevantNll = 4.0;

// Entity i ("e_0007", lemma "Artifact-07") belongs to culture i mod |C|.
// Each entity gets `images_per_entity` image rows plus lemma, gloss and
// article rows, all within `noise` of a private random centroid. Queries
// are noisy copies of a centroid. The planted table maps "culture|lemma" to
// a peaked distribution (score 5) for the entity's own culture and a low
// distribution (score 1) otherwise, with matching NLL entries.
PlantedFixture make_planted_fixture(const PlantedOptions& options = {});

// Moves `decoy` onto a query: its first image row becomes a copy of the
// gold entity's first image row and its lemma row becomes the query
// embedding, so lemma_vt links that query to the decoy.
void plant_decoy(PlantedFixture& fixture, const std::string& decoy, const PlantedQuery& query);

struct WrittenFixture {
  std::filesystem::path manifest;        // kb/manifest.json
  std::filesystem::path batch;           // batch.json
  std::filesystem::path queries;         // queries.emb
  std::filesystem::path planted_table;   // planted.json
  std::filesystem::path gold_specific;   // gold_specific.jsonl
  std::filesystem::path gold_context;    // gold_context.jsonl
};

WrittenFixture write_fixture(const std::filesystem::path& dir, const PlantedFixture& fixture);

// Seven-entity analog of the pysanka walkthrough: 20 retrieved image rows
// whose ownership lists produce frequencies 13/10/6/2/1/1/1, the top five
// covering all seven entities, and lemma similarities planted so the
// ranking is Pysanka, Easter, Easter egg, Folklore of Romania, Romania,
// Ukraine, Etymology of Ukraine. Five filler entities sit far from the
// query.
struct PysankaFixture {
  std::vector<EntityRecord> entities;
  EmbeddingMatrix image_matrix;
  EmbeddingMatrix text_matrix;
  std::vector<float> query;
  std::vector<double> top5_similarities;
  std::vector<std::pair<std::string, double>> lemma_similarities;  // expected ranking
  std::vector<std::pair<std::string, std::size_t>> frequencies;    // expected ranking at k=20
  std::vector<std::string> top5_unique;                            // first-appearance order at k=5
};

PysankaFixture make_pysanka_fixture();

}  // namespace caire::fixtures
