#pragma once

// Independent reference computations for tests. Nothing here calls into the
// code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "caire/fixtures.hpp"
#include "caire/kb_store.hpp"

namespace caire::oracle {

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

// (row, similarity) for every row, stable-sorted by similarity descending
// (so equal similarities stay in ascending row order), truncated to k.
inline std::vector<std::pair<std::size_t, double>> brute_force_topk(const EmbeddingMatrix& m, std::span<const float> q,
                                                                    std::size_t k) {
  std::vector<std::pair<std::size_t, double>> all;
  all.reserve(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) all.emplace_back(r, dot(m.row(r), q));
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  all.resize(std::min(k, all.size()));
  return all;
}

// Entity ids owning any of `rows`, with per-ownership counts.
inline std::map<std::string, std::size_t> ownership_counts(const KnowledgeBase& kb,
                                                           const std::vector<std::size_t>& rows) {
  std::map<std::string, std::size_t> counts;
  for (const auto& e : kb.entities())
    for (auto r : e.image_embedding_rows)
      if (std::find(rows.begin(), rows.end(), r) != rows.end()) ++counts[e.entity_id];
  return counts;
}

// lemma_vt recomputed directly: argmax over candidates with a lemma row of
// image·lemma, ties to the smaller id. Empty string if none qualifies.
inline std::string lemma_argmax(const KnowledgeBase& kb, std::span<const float> image,
                                const std::set<std::string>& candidates) {
  std::string best;
  double best_sim = -INFINITY;
  for (const auto& id : candidates) {  // ascending id order
    const auto* e = kb.find_entity(id);
    auto it = e->text_embedding_rows.find(TextField::kLemma);
    if (it == e->text_embedding_rows.end()) continue;
    const double s = dot(image, kb.text_matrix().row(it->second));
    if (s > best_sim) {
      best_sim = s;
      best = id;
    }
  }
  return best;
}

// Frequency ranking: count desc, then best row similarity desc, then id.
inline std::vector<std::string> frequency_ranking(const KnowledgeBase& kb,
                                                  const std::vector<std::pair<std::size_t, double>>& hits) {
  std::map<std::string, std::pair<std::size_t, double>> stats;
  for (const auto& e : kb.entities()) {
    for (auto r : e.image_embedding_rows) {
      for (const auto& [row, sim] : hits) {
        if (row != r) continue;
        auto& s = stats.try_emplace(e.entity_id, 0, -INFINITY).first->second;
        ++s.first;
        s.second = std::max(s.second, sim);
      }
    }
  }
  std::vector<std::pair<std::string, std::pair<std::size_t, double>>> v(stats.begin(), stats.end());
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first > b.second.first;
    if (a.second.second != b.second.second) return a.second.second > b.second.second;
    return a.first < b.first;
  });
  std::vector<std::string> out;
  for (const auto& x : v) out.push_back(x.first);
  return out;
}

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

template <typename Key>
Confusion confusion(const std::map<Key, bool>& pred, const std::map<Key, bool>& gold) {
  Confusion c;
  for (const auto& [k, p] : pred) {
    const bool g = gold.at(k);
    c.tp += p && g;
    c.fp += p && !g;
    c.fn += !p && g;
    c.tn += !p && !g;
  }
  return c;
}

// Textbook single-pass form in long double.
inline double pearson_closed_form(std::span<const double> x, std::span<const double> y) {
  long double n = x.size(), sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += (long double)x[i] * x[i];
    syy += (long double)y[i] * y[i];
    sxy += (long double)x[i] * y[i];
  }
  return static_cast<double>((n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy)));
}

// Random KB with many-to-many image ownership (1..3 owners per row) and a
// fraction of entities missing their lemma row.
struct RandomKb {
  std::vector<EntityRecord> entities;
  EmbeddingMatrix image;
  EmbeddingMatrix text;
};

inline RandomKb random_kb(std::mt19937_64& rng, std::size_t n_entities, std::size_t n_rows, std::uint32_t dim,
                          double missing_lemma = 0.1) {
  RandomKb kb;
  kb.image = fixtures::random_matrix(rng, n_rows, dim);
  std::vector<float> text;
  for (std::size_t i = 0; i < n_entities; ++i) {
    EntityRecord e;
    e.entity_id = "ent_" + std::to_string(i);
    e.lemma = "Lemma " + std::to_string(i);
    kb.entities.push_back(std::move(e));
  }
  for (std::size_t r = 0; r < n_rows; ++r) {
    const std::size_t owners = 1 + rng() % 3;
    std::set<std::size_t> chosen;
    while (chosen.size() < std::min(owners, n_entities)) chosen.insert(rng() % n_entities);
    for (auto i : chosen) kb.entities[i].image_embedding_rows.push_back(r);
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t text_rows = 0;
  for (auto& e : kb.entities) {
    if (u(rng) < missing_lemma) continue;
    auto v = fixtures::random_unit_vector(rng, dim);
    text.insert(text.end(), v.begin(), v.end());
    e.text_embedding_rows[TextField::kLemma] = text_rows++;
  }
  kb.text = EmbeddingMatrix(dim, std::move(text));
  return kb;
}

}  // namespace caire::oracle
