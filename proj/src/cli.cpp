#include "caire/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "caire/error.hpp"
#include "caire/evaluation.hpp"
#include "caire/fixtures.hpp"
#include "parallel.hpp"

namespace caire::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// --- config echo --------------------------------------------------------------

std::string config_echo(const RunConfig& c) {
  ordered_json j;
  j["type"] = "config";
  j["kb"] = c.kb;
  j["batch"] = c.batch;
  j["k"] = c.k;
  j["strategy"] = c.strategy;
  j["context"] = c.context;
  j["mode"] = c.mode;
  j["backend"] = c.backend;
  j["lambda"] = c.lambda;
  j["floor"] = c.floor;
  j["budget"] = c.budget;
  j["parallel"] = c.parallel;
  return j.dump();
}

RunConfig config_from_echo(const std::string& line) {
  RunConfig c;
  try {
    const json j = json::parse(line);
    if (j.value("type", "") != "config") throw Error(ErrorCode::kParse, "first record is not a config echo");
    c.kb = j.at("kb").get<std::string>();
    c.batch = j.at("batch").get<std::string>();
    c.k = j.at("k").get<std::size_t>();
    c.strategy = j.at("strategy").get<std::string>();
    c.context = j.at("context").get<std::string>();
    c.mode = j.at("mode").get<std::string>();
    c.backend = j.at("backend").get<std::string>();
    c.lambda = j.at("lambda").get<double>();
    c.floor = j.at("floor").get<double>();
    c.budget = j.at("budget").get<std::size_t>();
    c.parallel = j.at("parallel").get<unsigned>();
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kParse, std::string("config echo: ") + ex.what());
  }
  return c;
}

namespace {

// --- shared input handling ------------------------------------------------------

struct BatchItem {
  std::string query_id;
  std::size_t row = 0;
  std::vector<std::string> cultures;
  std::optional<ImagePayload> image;
  std::string gold_entity_id;
};

struct Batch {
  EmbeddingMatrix embeddings;
  std::vector<BatchItem> items;
};

std::string media_type_for(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".webp") return "image/webp";
  return "application/octet-stream";
}

Batch read_batch(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "missing batch manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kParse, path.string() + ": " + ex.what());
  }
  Batch b;
  const fs::path base = path.parent_path();
  try {
    const auto default_cultures = j.value("cultures", std::vector<std::string>{});
    for (const auto& q : j.at("queries")) {
      BatchItem item;
      item.query_id = q.at("query_id").get<std::string>();
      item.row = q.at("row").get<std::size_t>();
      item.cultures = q.value("cultures", default_cultures);
      item.gold_entity_id = q.value("gold_entity_id", "");
      if (q.contains("image_uri")) {
        item.image = ImagePayload{{}, {}, q["image_uri"].get<std::string>()};
      } else if (q.contains("image_path")) {
        const fs::path img = base / q["image_path"].get<std::string>();
        std::ifstream f(img, std::ios::binary);
        if (!f) throw Error(ErrorCode::kIo, "missing image " + img.string());
        std::ostringstream bytes;
        bytes << f.rdbuf();
        item.image = ImagePayload{bytes.str(), media_type_for(img), {}};
      }
      b.items.push_back(std::move(item));
    }
    if (!b.items.empty()) b.embeddings = read_embedding_file(base / j.at("embeddings").get<std::string>());
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kParse, path.string() + ": " + ex.what());
  }
  for (const auto& item : b.items)
    if (item.row >= b.embeddings.rows())
      throw Error(ErrorCode::kDanglingReference,
                  "query '" + item.query_id + "' references embedding row " + std::to_string(item.row));
  b.embeddings.normalize_rows();
  return b;
}

std::map<std::string, GoldContext> read_gold_contexts(const fs::path& path, const KnowledgeBase& kb) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "missing gold context file " + path.string());
  std::map<std::string, GoldContext> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      GoldContext g;
      const auto id = j.at("query_id").get<std::string>();
      if (j.contains("entity_id")) {
        const auto& e = kb.get_entity(j["entity_id"].get<std::string>());
        g.entity_name = e.lemma;
        g.text = !e.article_text.empty() ? e.article_text : !e.gloss.empty() ? e.gloss : e.lemma;
        g.source_entities = {e.entity_id};
      }
      g.entity_name = j.value("entity_name", g.entity_name);
      g.text = j.value("context_text", g.text);
      out[id] = std::move(g);
    } catch (const json::exception& ex) {
      throw Error(ErrorCode::kParse, path.string() + ": " + ex.what());
    }
  }
  return out;
}

struct ResolvedConfig {
  AttributionConfig attribution;
  std::optional<fs::path> gold_path;
};

ResolvedConfig resolve(const RunConfig& c) {
  ResolvedConfig r;
  auto& a = r.attribution;
  if (c.k == 0) throw Error(ErrorCode::kInvalidArgument, "--k must be at least 1");
  a.k = c.k;
  auto strategy = parse_link_strategy(c.strategy);
  if (!strategy) throw Error(ErrorCode::kInvalidArgument, "unknown strategy '" + c.strategy + "'");
  a.strategy = *strategy;
  if (c.context == "wiki_full") a.context_mode = ContextMode::kWikiFull;
  else if (c.context == "top20_titles") a.context_mode = ContextMode::kTop20Titles;
  else if (c.context == "none") a.context_mode = ContextMode::kNone;
  else if (c.context.rfind("gold:", 0) == 0) {
    a.context_mode = ContextMode::kGoldOverride;
    r.gold_path = c.context.substr(5);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown context mode '" + c.context + "'");
  }
  if (c.mode == "numerical") a.scoring_mode = ScoringMode::kNumerical;
  else if (c.mode == "loglik") a.scoring_mode = ScoringMode::kLoglik;
  else throw Error(ErrorCode::kInvalidArgument, "unknown scoring mode '" + c.mode + "'");
  if (c.lambda < 0.0) throw Error(ErrorCode::kInvalidArgument, "--lambda must be non-negative");
  a.debias = {c.lambda, c.floor};
  a.budget = c.budget;
  a.parallelism = 1;
  return r;
}

class RecordSink {
 public:
  RecordSink(const std::string& path, std::ostream& fallback) {
    if (!path.empty()) {
      file_.open(path, std::ios::trunc);
      if (!file_) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
    }
    out_ = path.empty() ? &fallback : &file_;
  }
  void write(const std::string& line) { *out_ << line << '\n'; }
  bool to_file() const { return file_.is_open(); }

 private:
  std::ofstream file_;
  std::ostream* out_;
};

ordered_json error_record(const std::string& query_id, const Error& e) {
  ordered_json j;
  j["type"] = "error";
  j["query_id"] = query_id;
  j["stage"] = e.stage();
  j["code"] = to_string(e.code());
  j["message"] = e.what();
  return j;
}

ordered_json score_record(const std::string& query_id, const CultureScore& s, const std::optional<LinkResult>& link) {
  ordered_json j;
  j["type"] = "score";
  j["query_id"] = query_id;
  j["culture"] = s.culture_label;
  j["score"] = s.score;
  ordered_json raw;
  if (const auto* d = std::get_if<ScoreDistribution>(&s.raw)) {
    raw["probs"] = d->p;
  } else {
    const auto& l = std::get<LoglikRaw>(s.raw);
    raw["raw_nll"] = l.raw_nll;
    raw["base_nll"] = l.base_nll;
    raw["debiased"] = l.debiased;
  }
  j["raw"] = std::move(raw);
  ordered_json prov;
  prov["strategy"] = s.provenance.strategy;
  prov["selected"] = link ? link->selected : (s.provenance.source_entities.empty() ? "" : s.provenance.source_entities.front());
  prov["context_mode"] = s.provenance.context_mode;
  prov["context_source"] = s.provenance.context_source;
  prov["source_entities"] = s.provenance.source_entities;
  prov["backend"] = s.provenance.backend_id;
  prov["warnings"] = s.provenance.warnings;
  j["provenance"] = std::move(prov);
  return j;
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

// --- commands -------------------------------------------------------------------

int cmd_build_index(const std::string& kb_dir, std::ostream& out) {
  const KbManifest m = build_manifest(kb_dir);
  // Loading through the manifest proves the checksums just written.
  load_kb(fs::path(kb_dir) / kManifestFile);
  out << "kb " << kb_dir << ": " << m.entity_count << " entities, " << m.image_rows << " image rows, " << m.text_rows
      << " text rows, dim " << m.dimension << (m.prenormalized ? "" : " (normalized at load)") << '\n';
  out << "  " << m.entities.path << "  " << m.entities.sha256 << '\n';
  out << "  " << m.image_matrix.path << "  " << m.image_matrix.sha256 << '\n';
  out << "  " << m.text_matrix.path << "  " << m.text_matrix.sha256 << '\n';
  return kExitOk;
}

fs::path manifest_path(const std::string& kb) {
  fs::path p(kb);
  return fs::is_directory(p) ? p / kManifestFile : p;
}

int cmd_link(const RunConfig& config, std::ostream& out) {
  const auto resolved = resolve(config);
  const auto& a = resolved.attribution;
  if (a.context_mode == ContextMode::kGoldOverride)
    throw Error(ErrorCode::kInvalidArgument, "link does not take a gold context");
  const KbPtr kb = load_kb(manifest_path(config.kb));
  const KbIndices indices(*kb);
  const Batch batch = read_batch(config.batch);

  RecordSink sink(config.out, out);
  sink.write(config_echo(config));
  std::vector<std::string> lines(batch.items.size());
  std::vector<std::string> table(batch.items.size());
  std::vector<char> failed(batch.items.size(), 0);
  detail::parallel_for(batch.items.size(), config.parallel, [&](std::size_t i) {
    const auto& item = batch.items[i];
    try {
      CandidateSet candidates;
      const LinkResult link = caire::link(batch.embeddings.row(item.row), *kb, indices, a.strategy, a.k, &candidates);
      ScoringContext ctx;
      if (a.context_mode != ContextMode::kNone) ctx = build_context(link, candidates, *kb, a.context_mode, a.budget);
      ordered_json j;
      j["type"] = "link";
      j["query_id"] = item.query_id;
      j["strategy"] = to_string(link.strategy);
      j["selected"] = link.selected;
      j["ranked"] = ordered_json::array();
      for (const auto& r : link.ranked_entities) j["ranked"].push_back({{"entity_id", r.entity_id}, {"score", r.score}});
      j["context_mode"] = to_string(a.context_mode);
      j["context_source"] = ctx.source_field;
      j["truncated"] = ctx.truncated;
      std::vector<std::string> warnings = link.warnings;
      warnings.insert(warnings.end(), ctx.warnings.begin(), ctx.warnings.end());
      j["warnings"] = warnings;
      lines[i] = j.dump();
      table[i] = item.query_id + "  " + link.selected + "  (" + kb->get_entity(link.selected).lemma + ")";
    } catch (const Error& e) {
      failed[i] = 1;
      lines[i] = error_record(item.query_id, e).dump();
      table[i] = item.query_id + "  ERROR " + e.what();
    }
  });
  for (const auto& l : lines) sink.write(l);
  if (sink.to_file())
    for (const auto& t : table) out << t << '\n';
  const auto nfailed = static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1));
  return nfailed == 0 ? kExitOk : kExitPartial;
}

int cmd_attribute(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const auto resolved = resolve(config);
  const auto& a = resolved.attribution;
  const KbPtr kb = load_kb(manifest_path(config.kb));
  const KbIndices indices(*kb);
  const Batch batch = read_batch(config.batch);
  std::map<std::string, GoldContext> gold;
  if (resolved.gold_path) gold = read_gold_contexts(*resolved.gold_path, *kb);

  auto backend = make_backend(config.backend, RetryPolicy{}, std::max(1u, config.parallel));
  // Fail fast on an unreachable or incapable backend.
  const Capabilities caps = backend->capabilities();
  if (a.scoring_mode == ScoringMode::kNumerical && !caps.distribution)
    throw Error(ErrorCode::kUnsupported, "backend does not support distribution mode");
  if (a.scoring_mode == ScoringMode::kLoglik && !caps.nll)
    throw Error(ErrorCode::kUnsupported, "backend does not support nll mode");

  RecordSink sink(config.out, out);
  sink.write(config_echo(config));
  std::vector<std::vector<std::string>> lines(batch.items.size());
  std::vector<std::string> table(batch.items.size());
  std::vector<char> failed(batch.items.size(), 0);
  detail::parallel_for(batch.items.size(), config.parallel, [&](std::size_t i) {
    const auto& item = batch.items[i];
    try {
      std::optional<GoldContext> g;
      if (resolved.gold_path) {
        auto it = gold.find(item.query_id);
        if (it == gold.end())
          throw Error(ErrorCode::kNotFound, "no gold context for query '" + item.query_id + "'").with_stage("context");
        g = it->second;
      }
      const auto result = attribute_image(*kb, indices, *backend, batch.embeddings.row(item.row), item.image,
                                          item.cultures, a, item.query_id, g);
      std::string row = item.query_id;
      for (const auto& s : result.scores) {
        lines[i].push_back(score_record(item.query_id, s, result.link).dump());
        row += "  " + s.culture_label + "=" + std::to_string(s.score);
      }
      table[i] = std::move(row);
    } catch (const Error& e) {
      failed[i] = 1;
      lines[i] = {error_record(item.query_id, e).dump()};
      table[i] = item.query_id + "  ERROR " + e.what();
    }
  });
  for (const auto& group : lines)
    for (const auto& l : group) sink.write(l);
  if (sink.to_file())
    for (const auto& t : table) out << t << '\n';
  const auto nfailed = static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1));
  if (nfailed > 0) err << nfailed << " of " << batch.items.size() << " queries failed\n";
  return nfailed == 0 ? kExitOk : kExitPartial;
}

struct EvaluateOptions {
  std::string predictions;
  std::string gold;
  std::string universal;
  std::string ratings;
  std::string gold_context_predictions;
  int threshold = eval::kDefaultThreshold;
  bool macro = false;
  std::string out;
};

ordered_json prf_json(const eval::Prf& p) {
  ordered_json j;
  j["precision"] = p.precision;
  j["recall"] = p.recall;
  j["f1"] = p.f1;
  j["tp"] = p.tp;
  j["fp"] = p.fp;
  j["fn"] = p.fn;
  j["tn"] = p.tn;
  j["precision_undefined"] = p.precision_undefined;
  j["recall_undefined"] = p.recall_undefined;
  return j;
}

int cmd_evaluate(const EvaluateOptions& o, std::ostream& out) {
  RecordSink sink(o.out, out);
  const bool table = sink.to_file();
  const auto averaging = o.macro ? eval::Averaging::kMacro : eval::Averaging::kMicro;

  if (!o.ratings.empty()) {
    // ratings → per-query country means
    std::map<std::string, std::vector<eval::LikertRating>> by_query;
    std::map<std::string, std::pair<std::string, std::string>> meta;
    std::ifstream in(o.ratings);
    if (!in) throw Error(ErrorCode::kIo, "cannot open " + o.ratings);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        const json j = json::parse(line);
        const auto q = j.at("query_id").get<std::string>();
        by_query[q].push_back(
            {j.at("annotator").get<std::string>(), j.at("country").get<std::string>(), j.at("score").get<int>()});
        meta[q] = {j.value("concept", ""), j.value("split", "natural")};
      } catch (const json::exception& ex) {
        throw Error(ErrorCode::kParse, o.ratings + ": " + ex.what());
      }
    }
    for (const auto& [q, ratings] : by_query) {
      const auto agg = eval::aggregate_likert(ratings);
      ordered_json j;
      j["query_id"] = q;
      j["concept"] = meta[q].first;
      j["split"] = meta[q].second;
      j["human_means"] = ordered_json::object();
      j["annotators"] = ordered_json::object();
      for (const auto& [country, a] : agg) {
        j["human_means"][country] = a.mean;
        j["annotators"][country] = a.annotators;
      }
      sink.write(j.dump());
      if (table) {
        out << q;
        for (const auto& [country, a] : agg) out << "  " << country << "=" << fmt(a.mean, 2) << " (n=" << a.ratings << ")";
        out << '\n';
      }
    }
    return kExitOk;
  }

  const auto predictions = eval::read_predictions(o.predictions);

  if (!o.gold.empty()) {
    const auto records = eval::read_specific_set(o.gold);
    const auto golds = eval::gold_pairs(records);
    const auto sweep = eval::threshold_sweep(predictions, golds, eval::kSweepThresholds, averaging);
    std::vector<int> main_threshold{o.threshold};
    const auto main = eval::threshold_sweep(predictions, golds, main_threshold, averaging).front();

    ordered_json report;
    report["type"] = "report";
    report["kind"] = "specific";
    report["averaging"] = o.macro ? "macro" : "micro";
    report["pairs"] = golds.size();
    report["queries"] = records.size();
    report["threshold"] = o.threshold;
    report["main"] = prf_json(main.prf);
    report["sweep"] = ordered_json::array();
    for (const auto& row : sweep) {
      auto j = prf_json(row.prf);
      j["threshold"] = row.threshold;
      report["sweep"].push_back(std::move(j));
    }
    if (!o.gold_context_predictions.empty()) {
      const auto gold_preds = eval::read_predictions(o.gold_context_predictions);
      const auto gold_main = eval::threshold_sweep(gold_preds, golds, main_threshold, averaging).front();
      report["gold_context"] = prf_json(gold_main.prf);
      report["gold_ratio"] = eval::gold_ratio(main.prf.f1, gold_main.prf.f1);
    }
    sink.write(report.dump());
    if (table) {
      out << "threshold  precision  recall  f1     positives\n";
      for (const auto& row : sweep)
        out << "    " << row.threshold << "      " << fmt(row.prf.precision) << "      " << fmt(row.prf.recall) << "   "
            << fmt(row.prf.f1) << "  " << row.prf.positive_predictions() << '\n';
      if (report.contains("gold_ratio")) out << "gold-context ratio: " << fmt(report["gold_ratio"].get<double>(), 1) << '\n';
    }
    return kExitOk;
  }

  if (!o.universal.empty()) {
    const auto records = eval::read_universal_set(o.universal);
    ordered_json report;
    report["type"] = "report";
    report["kind"] = "universal";
    report["splits"] = ordered_json::object();
    for (auto split : {eval::Split::kNatural, eval::Split::kGenerated}) {
      std::vector<eval::UniversalSetRecord> subset;
      std::copy_if(records.begin(), records.end(), std::back_inserter(subset),
                   [&](const auto& r) { return r.split == split; });
      if (subset.empty()) continue;
      const auto summary = eval::country_correlations(subset, predictions);
      ordered_json s;
      s["countries"] = ordered_json::array();
      for (const auto& c : summary.countries) {
        ordered_json cj;
        cj["country"] = c.country;
        cj["n"] = c.n;
        if (c.r) cj["pearson"] = *c.r;
        else cj["pearson"] = nullptr;
        if (!c.note.empty()) cj["note"] = c.note;
        s["countries"].push_back(std::move(cj));
      }
      s["defined"] = summary.defined;
      s["unweighted_mean"] = summary.unweighted_mean;
      s["count_weighted_mean"] = summary.weighted_mean;
      const char* name = split == eval::Split::kNatural ? "natural" : "generated";
      report["splits"][name] = std::move(s);
      if (table) {
        out << name << ":\n";
        for (const auto& c : summary.countries)
          out << "  " << c.country << "  " << (c.r ? fmt(*c.r) : std::string("undefined")) << "  (n=" << c.n << ")\n";
        out << "  avg (unweighted) " << fmt(summary.unweighted_mean) << "  avg (count-weighted) "
            << fmt(summary.weighted_mean) << '\n';
      }
    }
    sink.write(report.dump());
    return kExitOk;
  }
  throw Error(ErrorCode::kInvalidArgument, "evaluate needs --gold, --universal or --ratings");
}

int cmd_bench_vel(const RunConfig& config, const std::vector<std::string>& strategies, std::ostream& out) {
  const KbPtr kb = load_kb(manifest_path(config.kb));
  const KbIndices indices(*kb);
  const Batch batch = read_batch(config.batch);
  const std::size_t depth = std::max<std::size_t>(config.k, eval::kAccuracyKs.back());

  RecordSink sink(config.out, out);
  ordered_json report;
  report["type"] = "report";
  report["kind"] = "vel_accuracy";
  report["queries"] = batch.items.size();
  report["strategies"] = ordered_json::object();
  for (const auto& name : strategies) {
    const auto strategy = parse_link_strategy(name);
    if (!strategy) throw Error(ErrorCode::kInvalidArgument, "unknown strategy '" + name + "'");
    std::vector<std::map<std::size_t, bool>> per_query(batch.items.size());
    detail::parallel_for(batch.items.size(), config.parallel, [&](std::size_t i) {
      const auto& item = batch.items[i];
      if (item.gold_entity_id.empty())
        throw Error(ErrorCode::kParse, "query '" + item.query_id + "' has no gold_entity_id");
      const auto link = caire::link(batch.embeddings.row(item.row), *kb, indices, *strategy, depth);
      std::vector<std::string> ranked;
      for (const auto& r : link.ranked_entities) ranked.push_back(r.entity_id);
      per_query[i] = eval::vel_accuracy(ranked, item.gold_entity_id);
    });
    const auto rates = eval::accuracy_rates(per_query);
    ordered_json j;
    for (const auto& [k, rate] : rates) j["acc@" + std::to_string(k)] = rate;
    report["strategies"][name] = std::move(j);
    if (sink.to_file()) {
      out << std::left << std::setw(14) << name;
      for (const auto& [k, rate] : rates) out << "  @" << k << "=" << fmt(rate);
      out << '\n';
    }
  }
  sink.write(report.dump());
  return kExitOk;
}

int cmd_gen_fixture(const std::string& dir, const fixtures::PlantedOptions& options, std::ostream& out) {
  const auto f = fixtures::make_planted_fixture(options);
  const auto w = fixtures::write_fixture(dir, f);
  out << "wrote " << f.entities.size() << "-entity fixture with " << f.queries.size() << " queries to " << dir << '\n'
      << "  kb manifest    " << w.manifest.string() << '\n'
      << "  batch          " << w.batch.string() << '\n'
      << "  planted table  " << w.planted_table.string() << '\n'
      << "  gold (labels)  " << w.gold_specific.string() << '\n'
      << "  gold (context) " << w.gold_context.string() << '\n';
  return kExitOk;
}

void add_run_options(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("--kb", c.kb, "KB directory or manifest path")->required();
  cmd->add_option("--batch", c.batch, "batch manifest (JSON) of query embeddings");
  cmd->add_option("--k", c.k, "retrieval depth")->capture_default_str();
  cmd->add_option("--strategy", c.strategy, "lemma_vt|gloss_vt|frequency_vt|lemma_t|gloss_t|article_t")
      ->capture_default_str();
  cmd->add_option("--context", c.context, "wiki_full|top20_titles|gold:<path>|none")->capture_default_str();
  cmd->add_option("--budget", c.budget, "context budget in characters")->capture_default_str();
  cmd->add_option("--parallel", c.parallel, "max concurrent queries")->capture_default_str();
  cmd->add_option("--out", c.out, "output records file (default: stdout)");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"knowledge-grounded cultural relevance scoring", "caire"};
  app.require_subcommand(1);

  std::string kb_dir;
  auto* build = app.add_subcommand("build-index", "validate KB payload files and write manifest checksums");
  build->add_option("--kb", kb_dir, "KB directory")->required();

  RunConfig link_cfg;
  auto* link = app.add_subcommand("link", "visual entity linking for a batch of query embeddings");
  add_run_options(link, link_cfg);

  RunConfig attr_cfg;
  std::string replay;
  auto* attribute = app.add_subcommand("attribute", "score a batch of images against culture labels");
  add_run_options(attribute, attr_cfg);
  attribute->add_option("--mode", attr_cfg.mode, "numerical|loglik")->capture_default_str();
  attribute->add_option("--backend", attr_cfg.backend, "<url> or mock:<seed>[,<table>]")->capture_default_str();
  attribute->add_option("--lambda", attr_cfg.lambda, "debias scale")->capture_default_str();
  attribute->add_option("--floor", attr_cfg.floor, "debias floor")->capture_default_str();
  attribute->add_option("--replay", replay, "rerun the configuration echoed in an earlier output file");
  // --kb may come from --replay.
  attribute->get_option("--kb")->required(false);

  EvaluateOptions eval_opts;
  auto* evaluate = app.add_subcommand("evaluate", "metrics over predictions and gold records");
  evaluate->add_option("--predictions", eval_opts.predictions, "scores file from `attribute`");
  evaluate->add_option("--gold", eval_opts.gold, "specific-set gold records (binary multi-label)");
  evaluate->add_option("--universal", eval_opts.universal, "universal-set records (per-country human means)");
  evaluate->add_option("--ratings", eval_opts.ratings, "raw Likert ratings to aggregate into country means");
  evaluate->add_option("--gold-context-predictions", eval_opts.gold_context_predictions,
                       "scores from a gold-context run, for the gold ratio");
  evaluate->add_option("--threshold", eval_opts.threshold, "binarization threshold (score >= t)")
      ->check(CLI::Range(2, 5))
      ->capture_default_str();
  evaluate->add_flag("--macro", eval_opts.macro, "macro-average over labels instead of micro");
  evaluate->add_option("--out", eval_opts.out, "report file (default: stdout)");

  RunConfig bench_cfg;
  std::vector<std::string> strategies = {"lemma_vt", "gloss_vt", "frequency_vt", "lemma_t", "gloss_t", "article_t"};
  auto* bench = app.add_subcommand("bench-vel", "entity-linking accuracy@{1,5,10,20} per strategy");
  add_run_options(bench, bench_cfg);
  bench->add_option("--strategies", strategies, "strategies to compare")->delimiter(',');

  std::string fixture_dir;
  fixtures::PlantedOptions fixture_opts;
  auto* gen = app.add_subcommand("gen-fixture", "write a synthetic planted KB, query batch and gold files");
  gen->add_option("--out", fixture_dir, "output directory")->required();
  gen->add_option("--entities", fixture_opts.entities)->capture_default_str();
  gen->add_option("--dim", fixture_opts.dimension)->capture_default_str();
  gen->add_option("--queries", fixture_opts.queries)->capture_default_str();
  gen->add_option("--seed", fixture_opts.seed)->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitFatal;
  }

  try {
    if (*build) return cmd_build_index(kb_dir, out);
    if (*link) {
      if (link_cfg.batch.empty()) throw Error(ErrorCode::kInvalidArgument, "--batch is required");
      return cmd_link(link_cfg, out);
    }
    if (*attribute) {
      if (!replay.empty()) {
        std::ifstream in(replay);
        std::string first;
        if (!in || !std::getline(in, first)) throw Error(ErrorCode::kIo, "cannot read " + replay);
        const std::string out_path = attr_cfg.out;
        attr_cfg = config_from_echo(first);
        attr_cfg.out = out_path;
      }
      if (attr_cfg.kb.empty() || attr_cfg.batch.empty())
        throw Error(ErrorCode::kInvalidArgument, "--kb and --batch are required");
      return cmd_attribute(attr_cfg, out, err);
    }
    if (*evaluate) {
      if (eval_opts.ratings.empty() && eval_opts.predictions.empty())
        throw Error(ErrorCode::kInvalidArgument, "--predictions is required");
      return cmd_evaluate(eval_opts, out);
    }
    if (*bench) {
      if (bench_cfg.batch.empty()) throw Error(ErrorCode::kInvalidArgument, "--batch is required");
      return cmd_bench_vel(bench_cfg, strategies, out);
    }
    if (*gen) return cmd_gen_fixture(fixture_dir, fixture_opts, out);
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return kExitFatal;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFatal;
  }
  return kExitFatal;
}

}  // namespace caire::cli
