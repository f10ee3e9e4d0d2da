#include "caire/fixtures.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "caire/error.hpp"

namespace caire::fixtures {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<float> random_unit_vector(std::mt19937_64& rng, std::uint32_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = normal(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  std::vector<float> out(dim);
  for (std::uint32_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

EmbeddingMatrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::uint32_t dim) {
  std::vector<float> data;
  data.reserve(rows * dim);
  for (std::size_t r = 0; r < rows; ++r) {
    auto v = random_unit_vector(rng, dim);
    data.insert(data.end(), v.begin(), v.end());
  }
  return EmbeddingMatrix(dim, std::move(data));
}

namespace {

std::vector<float> jitter(std::mt19937_64& rng, const std::vector<float>& centre, double noise) {
  auto dir = random_unit_vector(rng, static_cast<std::uint32_t>(centre.size()));
  std::vector<double> v(centre.size());
  double norm = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = centre[i] + noise * dir[i];
    norm += v[i] * v[i];
  }
  norm = std::sqrt(norm);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

std::string two_digit(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02zu", i);
  return buf;
}

std::string four_digit(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return buf;
}

}  // namespace

PlantedFixture make_planted_fixture(const PlantedOptions& opt) {
  if (opt.entities == 0 || opt.cultures.empty() || opt.dimension == 0)
    throw Error(ErrorCode::kInvalidArgument, "planted fixture needs entities, cultures and a dimension");
  std::mt19937_64 rng(opt.seed);
  PlantedFixture f;
  f.cultures = opt.cultures;

  std::vector<float> image_data, text_data;
  std::vector<std::vector<float>> centroids;
  std::size_t image_rows = 0, text_rows = 0;
  for (std::size_t i = 0; i < opt.entities; ++i) {
    const auto centre = random_unit_vector(rng, opt.dimension);
    centroids.push_back(centre);
    EntityRecord e;
    e.entity_id = "e_" + four_digit(i);
    e.lemma = "Artifact-" + two_digit(i);
    const std::string& culture = opt.cultures[i % opt.cultures.size()];
    e.gloss = e.lemma + " is a traditional object from " + culture + ".";
    e.article_text = e.lemma + " is a traditional object closely associated with " + culture +
                     ". It appears in festivals, crafts and everyday life, and is widely recognised as a symbol of " +
                     culture + ".";
    for (std::size_t r = 0; r < opt.images_per_entity; ++r) {
      auto v = jitter(rng, centre, opt.noise);
      image_data.insert(image_data.end(), v.begin(), v.end());
      e.image_embedding_rows.push_back(image_rows++);
    }
    for (auto field : {TextField::kLemma, TextField::kGloss, TextField::kArticle}) {
      auto v = jitter(rng, centre, opt.noise);
      text_data.insert(text_data.end(), v.begin(), v.end());
      e.text_embedding_rows[field] = text_rows++;
    }
    f.entity_culture[e.entity_id] = culture;
    for (const auto& c : opt.cultures) {
      const std::string key = c + "|" + e.lemma;
      const bool own = c == culture;
      f.table.distributions[key] = own ? kPlantedRelevant : kPlantedIrrelevant;
      f.table.nll[key] = own ? kPlantedRelevantNll : kPlantedIrrelevantNll;
    }
    f.entities.push_back(std::move(e));
  }
  f.image_matrix = EmbeddingMatrix(opt.dimension, std::move(image_data));
  f.text_matrix = EmbeddingMatrix(opt.dimension, std::move(text_data));

  for (std::size_t q = 0; q < opt.queries; ++q) {
    // Spread queries over entities deterministically.
    const std::size_t target = (q * 7 + 3) % opt.entities;
    PlantedQuery pq;
    pq.query_id = "q_" + four_digit(q);
    pq.embedding = jitter(rng, centroids[target], opt.noise);
    pq.gold_entity = f.entities[target].entity_id;
    pq.gold_culture = f.entity_culture[pq.gold_entity];
    f.queries.push_back(std::move(pq));
  }
  return f;
}

void plant_decoy(PlantedFixture& fixture, const std::string& decoy, const PlantedQuery& query) {
  const EntityRecord* gold = nullptr;
  EntityRecord* target = nullptr;
  for (auto& e : fixture.entities) {
    if (e.entity_id == query.gold_entity) gold = &e;
    if (e.entity_id == decoy) target = &e;
  }
  if (!gold || !target || target->image_embedding_rows.empty() || !target->text_embedding_rows.contains(TextField::kLemma))
    throw Error(ErrorCode::kNotFound, "plant_decoy: unknown gold or decoy entity");
  auto src = fixture.image_matrix.row(gold->image_embedding_rows.front());
  std::vector<float> copy(src.begin(), src.end());
  auto dst = fixture.image_matrix.mutable_row(target->image_embedding_rows.front());
  std::copy(copy.begin(), copy.end(), dst.begin());
  auto lemma = fixture.text_matrix.mutable_row(target->text_embedding_rows.at(TextField::kLemma));
  std::copy(query.embedding.begin(), query.embedding.end(), lemma.begin());
}

WrittenFixture write_fixture(const fs::path& dir, const PlantedFixture& f) {
  fs::create_directories(dir);
  WrittenFixture w;
  w.manifest = write_kb(dir / "kb", f.entities, f.image_matrix, f.text_matrix);

  std::vector<float> qdata;
  for (const auto& q : f.queries) qdata.insert(qdata.end(), q.embedding.begin(), q.embedding.end());
  w.queries = dir / "queries.emb";
  write_embedding_file(w.queries, EmbeddingMatrix(f.image_matrix.dimension(), std::move(qdata)));

  json batch;
  batch["embeddings"] = "queries.emb";
  batch["queries"] = json::array();
  for (std::size_t i = 0; i < f.queries.size(); ++i) {
    const auto& q = f.queries[i];
    batch["queries"].push_back(
        {{"query_id", q.query_id}, {"row", i}, {"cultures", f.cultures}, {"gold_entity_id", q.gold_entity}});
  }
  w.batch = dir / "batch.json";
  std::ofstream(w.batch) << batch.dump(2) << '\n';

  w.planted_table = dir / "planted.json";
  save_planted_table(w.planted_table, f.table);

  w.gold_specific = dir / "gold_specific.jsonl";
  w.gold_context = dir / "gold_context.jsonl";
  std::ofstream specific(w.gold_specific), context(w.gold_context);
  for (const auto& q : f.queries) {
    specific << json{{"query_id", q.query_id},
                     {"culture_proxy", "countries"},
                     {"label_set", f.cultures},
                     {"gold_labels", json::array({q.gold_culture})}}
                    .dump()
             << '\n';
    context << json{{"query_id", q.query_id}, {"entity_id", q.gold_entity}}.dump() << '\n';
  }
  return w;
}

// --- pysanka analog -----------------------------------------------------------

PysankaFixture make_pysanka_fixture() {
  constexpr std::uint32_t kDim = 64;
  struct Named {
    const char* id;
    const char* lemma;
    double lemma_sim;
  };
  // Entity table order doubles as the first-appearance order of the
  // unique-entity list.
  const std::vector<Named> named = {
      {"bn:00068196n", "Romania", 0.5037},
      {"bn:00029497n", "Easter", 0.5161},
      {"bn:00078872n", "Ukraine", 0.4985},
      {"bn:00538675n", "Folklore of Romania", 0.5108},
      {"bn:02889635n", "Etymology of Ukraine", 0.4942},
      {"bn:03096581n", "Pysanka", 0.5243},
      {"bn:00029503n", "Easter egg", 0.5157},
  };
  enum { R, E, U, F, Et, P, EE };
  // Owners of each of the 20 nearest image rows.
  const std::vector<std::vector<int>> owners = {
      {R, E, U, F}, {Et, P, EE, U}, {E, P, EE}, {E, P, EE}, {E, P},
      {P, EE},      {P, EE},        {P, EE},    {P},        {P},
      {P},          {P},            {P},        {P},        {EE},
      {EE},         {EE},           {EE},       {E},        {E},
  };
  const std::vector<double> top5 = {0.9232446, 0.92118037, 0.92117214, 0.9197761, 0.9105648};
  constexpr std::size_t kFillers = 5;
  constexpr std::size_t kFillerRows = 2;

  auto planted = [&](double sim, std::size_t other_axis) {
    std::vector<float> v(kDim, 0.0f);
    v[0] = static_cast<float>(sim);
    v[other_axis] = static_cast<float>(std::sqrt(1.0 - sim * sim));
    return v;
  };

  PysankaFixture f;
  f.query.assign(kDim, 0.0f);
  f.query[0] = 1.0f;
  f.top5_similarities = top5;

  std::vector<float> image_data;
  std::size_t next_axis = 1;
  std::vector<std::vector<std::uint64_t>> rows_of(named.size() + kFillers);
  for (std::size_t r = 0; r < owners.size(); ++r) {
    const double sim = r < top5.size() ? top5[r] : 0.90 - 0.01 * static_cast<double>(r - top5.size());
    auto v = planted(sim, next_axis++);
    image_data.insert(image_data.end(), v.begin(), v.end());
    for (int o : owners[r]) rows_of[o].push_back(r);
  }
  for (std::size_t j = 0; j < kFillers; ++j) {
    for (std::size_t r = 0; r < kFillerRows; ++r) {
      const std::size_t row = image_data.size() / kDim;
      auto v = planted(0.2 - 0.01 * static_cast<double>(j * kFillerRows + r), next_axis++);
      image_data.insert(image_data.end(), v.begin(), v.end());
      rows_of[named.size() + j].push_back(row);
    }
  }

  std::vector<float> text_data;
  auto add_text = [&](const std::vector<float>& v) {
    const std::size_t row = text_data.size() / kDim;
    text_data.insert(text_data.end(), v.begin(), v.end());
    return static_cast<std::uint64_t>(row);
  };

  for (std::size_t i = 0; i < named.size(); ++i) {
    EntityRecord e;
    e.entity_id = named[i].id;
    e.lemma = named[i].lemma;
    e.gloss = std::string(named[i].lemma) + " (synthetic gloss).";
    e.article_text = std::string(named[i].lemma) + " is an entity in the synthetic walkthrough knowledge base.";
    e.image_embedding_rows = rows_of[i];
    e.text_embedding_rows[TextField::kLemma] = add_text(planted(named[i].lemma_sim, next_axis++));
    e.text_embedding_rows[TextField::kGloss] = add_text(planted(named[i].lemma_sim - 0.02, next_axis++));
    f.entities.push_back(std::move(e));
  }
  for (std::size_t j = 0; j < kFillers; ++j) {
    EntityRecord e;
    e.entity_id = "filler_" + std::to_string(j);
    e.lemma = "Filler " + std::to_string(j);
    e.image_embedding_rows = rows_of[named.size() + j];
    e.text_embedding_rows[TextField::kLemma] = add_text(planted(0.1, next_axis++));
    f.entities.push_back(std::move(e));
  }
  if (next_axis > kDim) throw Error(ErrorCode::kInvalidArgument, "pysanka fixture ran out of axes");

  f.image_matrix = EmbeddingMatrix(kDim, std::move(image_data));
  f.text_matrix = EmbeddingMatrix(kDim, std::move(text_data));

  f.lemma_similarities = {{"bn:03096581n", 0.5243}, {"bn:00029497n", 0.5161}, {"bn:00029503n", 0.5157},
                          {"bn:00538675n", 0.5108}, {"bn:00068196n", 0.5037}, {"bn:00078872n", 0.4985},
                          {"bn:02889635n", 0.4942}};
  f.frequencies = {{"bn:03096581n", 13}, {"bn:00029503n", 10}, {"bn:00029497n", 6}, {"bn:00078872n", 2},
                   {"bn:00068196n", 1},  {"bn:00538675n", 1},  {"bn:02889635n", 1}};
  f.top5_unique = {"bn:00068196n", "bn:00029497n", "bn:00078872n", "bn:00538675n",
                   "bn:02889635n", "bn:03096581n", "bn:00029503n"};
  return f;
}

}  // namespace caire::fixtures
