#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace caire::eval {

// (query_id, culture label)
using PairKey = std::pair<std::string, std::string>;

inline constexpr int kDefaultThreshold = 4;
inline constexpr std::array<int, 4> kSweepThresholds = {2, 3, 4, 5};
inline constexpr std::array<std::size_t, 4> kAccuracyKs = {1, 5, 10, 20};

// score >= threshold. The main setting, "greater than 3", is threshold 4.
bool binarize(int score, int threshold = kDefaultThreshold);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  // Set when the corresponding denominator was zero and the value was
  // reported as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
  std::size_t positive_predictions() const { return tp + fp; }
};

enum class Averaging { kMicro, kMacro };

// Micro: pooled over all (query, label) pairs. Macro: unweighted mean of
// per-label P/R/F1. Throws Error{kKeyMismatch} if the key sets differ.
Prf multilabel_prf(const std::map<PairKey, bool>& predictions, const std::map<PairKey, bool>& golds,
                   Averaging averaging = Averaging::kMicro);

struct SweepRow {
  int threshold = 0;
  Prf prf;
};

std::vector<SweepRow> threshold_sweep(const std::map<PairKey, int>& scores, const std::map<PairKey, bool>& golds,
                                      std::span<const int> thresholds = kSweepThresholds,
                                      Averaging averaging = Averaging::kMicro);

// Sample Pearson r. Throws Error{kUndefined} on zero variance and
// Error{kInvalidArgument} on length mismatch or fewer than 3 points.
double pearson(std::span<const double> x, std::span<const double> y);

struct LikertRating {
  std::string annotator;
  std::string country;
  int score = 0;
};

struct LikertAggregate {
  double mean = 0.0;
  std::size_t ratings = 0;
  std::size_t annotators = 0;
};

std::map<std::string, LikertAggregate> aggregate_likert(std::span<const LikertRating> ratings);

// hit@k for each k: gold appears among the first k entries.
std::map<std::size_t, bool> vel_accuracy(std::span<const std::string> ranked, const std::string& gold,
                                         std::span<const std::size_t> ks = kAccuracyKs);

// Fraction of queries hit at each k.
std::map<std::size_t, double> accuracy_rates(const std::vector<std::map<std::size_t, bool>>& per_query);

// 100 · system / gold.
double gold_ratio(double system_f1, double gold_context_f1);

// --- records ------------------------------------------------------------------

struct SpecificSetRecord {
  std::string query_id;
  std::string culture_proxy;
  std::vector<std::string> label_set;
  std::set<std::string> gold_labels;
};

enum class Split { kGenerated, kNatural };

struct UniversalSetRecord {
  std::string query_id;
  std::string concept_name;
  std::map<std::string, double> human_means;
  Split split = Split::kNatural;
};

std::vector<SpecificSetRecord> read_specific_set(const std::filesystem::path& path);
std::vector<UniversalSetRecord> read_universal_set(const std::filesystem::path& path);
// Reads score records ({"query_id","culture","score"}); lines without a
// score (e.g. the config echo) are skipped.
std::map<PairKey, int> read_predictions(const std::filesystem::path& path);

// All (query, label) pairs of the declared label sets, true where gold.
std::map<PairKey, bool> gold_pairs(const std::vector<SpecificSetRecord>& records);

struct CountryCorrelation {
  std::string country;
  std::optional<double> r;  // empty when undefined
  std::size_t n = 0;
  std::string note;
};

struct CorrelationSummary {
  std::vector<CountryCorrelation> countries;
  double unweighted_mean = 0.0;
  double weighted_mean = 0.0;  // weighted by item count per country
  std::size_t defined = 0;
};

// Per-country Pearson between human means and predicted scores over the
// given records. Countries whose correlation is undefined are listed with a
// note and excluded from both averages.
CorrelationSummary country_correlations(const std::vector<UniversalSetRecord>& records,
                                        const std::map<PairKey, int>& predictions);

}  // namespace caire::eval
