#include "caire/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "caire/error.hpp"

namespace caire::eval {

using nlohmann::json;

bool binarize(int score, int threshold) {
  if (score < 1 || score > 5) throw Error(ErrorCode::kInvalidArgument, "score out of range 1..5: " + std::to_string(score));
  if (threshold < 2 || threshold > 5)
    throw Error(ErrorCode::kInvalidArgument, "threshold out of range 2..5: " + std::to_string(threshold));
  return score >= threshold;
}

namespace {

void finish(Prf& m) {
  const std::size_t pp = m.tp + m.fp;
  const std::size_t ap = m.tp + m.fn;
  m.precision_undefined = pp == 0;
  m.recall_undefined = ap == 0;
  m.precision = pp == 0 ? 0.0 : static_cast<double>(m.tp) / static_cast<double>(pp);
  m.recall = ap == 0 ? 0.0 : static_cast<double>(m.tp) / static_cast<double>(ap);
  m.f1 = (m.precision + m.recall) == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
}

void count(Prf& m, bool pred, bool gold) {
  if (pred && gold) ++m.tp;
  else if (pred) ++m.fp;
  else if (gold) ++m.fn;
  else ++m.tn;
}

}  // namespace

Prf multilabel_prf(const std::map<PairKey, bool>& predictions, const std::map<PairKey, bool>& golds,
                   Averaging averaging) {
  if (predictions.size() != golds.size())
    throw Error(ErrorCode::kKeyMismatch, "prediction and gold key sets differ in size (" +
                                             std::to_string(predictions.size()) + " vs " +
                                             std::to_string(golds.size()) + ")");
  Prf pooled;
  std::map<std::string, Prf> per_label;
  auto g = golds.begin();
  for (const auto& [key, pred] : predictions) {
    if (g->first != key)
      throw Error(ErrorCode::kKeyMismatch, "key (" + key.first + ", " + key.second + ") has no matching gold entry");
    count(pooled, pred, g->second);
    if (averaging == Averaging::kMacro) count(per_label[key.second], pred, g->second);
    ++g;
  }
  finish(pooled);
  if (averaging == Averaging::kMicro || per_label.empty()) return pooled;

  Prf macro = pooled;  // keep the pooled counts
  macro.precision = macro.recall = macro.f1 = 0.0;
  macro.precision_undefined = macro.recall_undefined = false;
  for (auto& [label, m] : per_label) {
    finish(m);
    macro.precision += m.precision;
    macro.recall += m.recall;
    macro.f1 += m.f1;
    macro.precision_undefined |= m.precision_undefined;
    macro.recall_undefined |= m.recall_undefined;
  }
  const auto n = static_cast<double>(per_label.size());
  macro.precision /= n;
  macro.recall /= n;
  macro.f1 /= n;
  return macro;
}

std::vector<SweepRow> threshold_sweep(const std::map<PairKey, int>& scores, const std::map<PairKey, bool>& golds,
                                      std::span<const int> thresholds, Averaging averaging) {
  std::vector<SweepRow> rows;
  for (int t : thresholds) {
    std::map<PairKey, bool> preds;
    for (const auto& [key, s] : scores) preds.emplace_hint(preds.end(), key, binarize(s, t));
    rows.push_back({t, multilabel_prf(preds, golds, averaging)});
  }
  return rows;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw Error(ErrorCode::kInvalidArgument, "pearson: length mismatch " + std::to_string(x.size()) + " vs " +
                                                 std::to_string(y.size()));
  if (x.size() < 3) throw Error(ErrorCode::kInvalidArgument, "pearson: need at least 3 points");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::kUndefined, "pearson: zero variance input");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

std::map<std::string, LikertAggregate> aggregate_likert(std::span<const LikertRating> ratings) {
  if (ratings.empty()) throw Error(ErrorCode::kEmpty, "no ratings to aggregate");
  std::map<std::string, double> sums;
  std::map<std::string, std::set<std::string>> annotators;
  std::map<std::string, LikertAggregate> out;
  for (const auto& r : ratings) {
    if (r.score < 1 || r.score > 5)
      throw Error(ErrorCode::kInvalidArgument, "likert score out of range: " + std::to_string(r.score));
    sums[r.country] += r.score;
    annotators[r.country].insert(r.annotator);
    ++out[r.country].ratings;
  }
  for (auto& [country, agg] : out) {
    agg.mean = sums[country] / static_cast<double>(agg.ratings);
    agg.annotators = annotators[country].size();
  }
  return out;
}

std::map<std::size_t, bool> vel_accuracy(std::span<const std::string> ranked, const std::string& gold,
                                         std::span<const std::size_t> ks) {
  if (ranked.empty()) throw Error(ErrorCode::kEmpty, "empty ranking");
  std::size_t rank = ranked.size();  // sentinel: not found
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (ranked[i] == gold) {
      rank = i;
      break;
    }
  }
  std::map<std::size_t, bool> hits;
  for (auto k : ks) hits[k] = rank < k;
  return hits;
}

std::map<std::size_t, double> accuracy_rates(const std::vector<std::map<std::size_t, bool>>& per_query) {
  std::map<std::size_t, double> rates;
  if (per_query.empty()) return rates;
  for (const auto& q : per_query)
    for (const auto& [k, hit] : q) rates[k] += hit ? 1.0 : 0.0;
  for (auto& [k, v] : rates) v /= static_cast<double>(per_query.size());
  return rates;
}

double gold_ratio(double system_f1, double gold_context_f1) {
  if (!(gold_context_f1 > 0.0)) throw Error(ErrorCode::kInvalidArgument, "gold-context F1 must be positive");
  return 100.0 * system_f1 / gold_context_f1;
}

// --- records ------------------------------------------------------------------

namespace {

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& ex) {
      throw Error(ErrorCode::kParse, path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    } catch (const Error& ex) {
      throw Error(ex.code(), path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
}

}  // namespace

std::vector<SpecificSetRecord> read_specific_set(const std::filesystem::path& path) {
  std::vector<SpecificSetRecord> out;
  for_each_json_line(path, [&](const json& j) {
    SpecificSetRecord r;
    r.query_id = j.at("query_id").get<std::string>();
    r.culture_proxy = j.value("culture_proxy", "");
    r.label_set = j.at("label_set").get<std::vector<std::string>>();
    for (const auto& g : j.at("gold_labels")) r.gold_labels.insert(g.get<std::string>());
    if (r.gold_labels.empty()) throw Error(ErrorCode::kParse, "gold_labels must not be empty");
    for (const auto& g : r.gold_labels)
      if (std::find(r.label_set.begin(), r.label_set.end(), g) == r.label_set.end())
        throw Error(ErrorCode::kParse, "gold label '" + g + "' is not in the label set");
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<UniversalSetRecord> read_universal_set(const std::filesystem::path& path) {
  std::vector<UniversalSetRecord> out;
  for_each_json_line(path, [&](const json& j) {
    UniversalSetRecord r;
    r.query_id = j.at("query_id").get<std::string>();
    r.concept_name = j.value("concept", "");
    const std::string split = j.value("split", "natural");
    if (split == "natural") r.split = Split::kNatural;
    else if (split == "generated") r.split = Split::kGenerated;
    else throw Error(ErrorCode::kParse, "unknown split '" + split + "'");
    r.human_means = j.at("human_means").get<std::map<std::string, double>>();
    if (r.human_means.empty()) throw Error(ErrorCode::kParse, "human_means must not be empty");
    for (const auto& [c, m] : r.human_means)
      if (m < 1.0 || m > 5.0) throw Error(ErrorCode::kParse, "human mean for '" + c + "' outside [1,5]");
    out.push_back(std::move(r));
  });
  return out;
}

std::map<PairKey, int> read_predictions(const std::filesystem::path& path) {
  std::map<PairKey, int> out;
  for_each_json_line(path, [&](const json& j) {
    if (!j.contains("score")) return;
    PairKey key{j.at("query_id").get<std::string>(), j.at("culture").get<std::string>()};
    const int s = j.at("score").get<int>();
    if (s < 1 || s > 5) throw Error(ErrorCode::kParse, "score out of range");
    if (!out.emplace(std::move(key), s).second) throw Error(ErrorCode::kParse, "duplicate prediction");
  });
  return out;
}

std::map<PairKey, bool> gold_pairs(const std::vector<SpecificSetRecord>& records) {
  std::map<PairKey, bool> out;
  for (const auto& r : records)
    for (const auto& label : r.label_set) out[{r.query_id, label}] = r.gold_labels.contains(label);
  return out;
}

CorrelationSummary country_correlations(const std::vector<UniversalSetRecord>& records,
                                        const std::map<PairKey, int>& predictions) {
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> series;
  for (const auto& r : records) {
    for (const auto& [country, mean] : r.human_means) {
      auto it = predictions.find({r.query_id, country});
      if (it == predictions.end())
        throw Error(ErrorCode::kKeyMismatch, "no prediction for (" + r.query_id + ", " + country + ")");
      series[country].first.push_back(mean);
      series[country].second.push_back(static_cast<double>(it->second));
    }
  }
  CorrelationSummary s;
  double weight = 0.0;
  for (auto& [country, xy] : series) {
    CountryCorrelation c{country, std::nullopt, xy.first.size(), {}};
    try {
      c.r = pearson(xy.first, xy.second);
      s.unweighted_mean += *c.r;
      s.weighted_mean += *c.r * static_cast<double>(c.n);
      weight += static_cast<double>(c.n);
      ++s.defined;
    } catch (const Error& e) {
      c.note = e.what();
    }
    s.countries.push_back(std::move(c));
  }
  if (s.defined > 0) {
    s.unweighted_mean /= static_cast<double>(s.defined);
    s.weighted_mean /= weight;
  }
  return s;
}

}  // namespace caire::eval
