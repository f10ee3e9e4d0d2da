#include <doctest.h>

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "caire/cli.hpp"
#include "caire/fixtures.hpp"
#include "test_util.hpp"

using namespace caire;
using caire::testing::slurp;
using caire::testing::TempDir;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<json> records(const std::string& text) {
  std::vector<json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

struct CliFixture {
  TempDir dir;
  fixtures::WrittenFixture files;
  std::string kb;

  explicit CliFixture(fixtures::PlantedOptions options = {.entities = 20, .dimension = 32, .queries = 5}) {
    files = fixtures::write_fixture(dir.path(), fixtures::make_planted_fixture(options));
    kb = files.manifest.parent_path().string();
  }
  std::string mock() const { return "mock:42," + files.planted_table.string(); }
};

}  // namespace

TEST_CASE("build-index") {
  CliFixture f;
  std::filesystem::remove(f.files.manifest);
  const auto r = run({"build-index", "--kb", f.kb});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out.find("20 entities") != std::string::npos);
  CHECK(std::filesystem::exists(f.files.manifest));

  SUBCASE("broken KB is fatal") {
    std::filesystem::remove(f.dir / "kb" / "image.emb");
    const auto bad = run({"build-index", "--kb", f.kb});
    CHECK(bad.code == cli::kExitFatal);
    CHECK_FALSE(bad.err.empty());
  }
}

TEST_CASE("attribute") {
  CliFixture f;

  SUBCASE("one score record per image and culture") {
    const auto r = run({"attribute", "--kb", f.kb, "--batch", f.files.batch.string(), "--backend", f.mock()});
    CHECK(r.code == cli::kExitOk);
    const auto recs = records(r.out);
    REQUIRE(recs.size() == 1 + 5 * 5);
    CHECK(recs[0]["type"] == "config");
    for (std::size_t i = 1; i < recs.size(); ++i) {
      CHECK(recs[i]["type"] == "score");
      CHECK(recs[i]["provenance"]["backend"] == "mock:42");
      CHECK(recs[i]["raw"]["probs"].size() == 5);
    }
  }

  SUBCASE("output file, replay, determinism") {
    const auto a = (f.dir / "a.jsonl").string();
    const auto b = (f.dir / "b.jsonl").string();
    const auto first = run({"attribute", "--kb", f.kb, "--batch", f.files.batch.string(), "--backend", f.mock(),
                            "--parallel", "3", "--out", a});
    CHECK(first.code == cli::kExitOk);
    CHECK(first.out.find("q_0000") != std::string::npos);  // human table
    const auto second = run({"attribute", "--replay", a, "--out", b});
    CHECK(second.code == cli::kExitOk);
    CHECK(slurp(a) == slurp(b));
  }

  SUBCASE("loglik mode") {
    const auto r = run({"attribute", "--kb", f.kb, "--batch", f.files.batch.string(), "--backend", f.mock(), "--mode",
                        "loglik", "--lambda", "0"});
    CHECK(r.code == cli::kExitOk);
    const auto recs = records(r.out);
    CHECK(recs[1]["raw"].contains("debiased"));
  }

  SUBCASE("gold context") {
    const auto r = run({"attribute", "--kb", f.kb, "--batch", f.files.batch.string(), "--backend", f.mock(),
                        "--context", "gold:" + f.files.gold_context.string()});
    CHECK(r.code == cli::kExitOk);
    CHECK(records(r.out)[1]["provenance"]["strategy"] == "gold");
  }

  SUBCASE("empty batch") {
    std::ofstream(f.dir / "empty.json") << R"({"embeddings":"queries.emb","queries":[]})";
    const auto r = run({"attribute", "--kb", f.kb, "--batch", (f.dir / "empty.json").string()});
    CHECK(r.code == cli::kExitOk);
    CHECK(records(r.out).size() == 1);
  }

  SUBCASE("unreachable backend is fatal before any scoring") {
    const auto r = run({"attribute", "--kb", f.kb, "--batch", f.files.batch.string(), "--backend",
                        "http://127.0.0.1:1"});
    CHECK(r.code == cli::kExitFatal);
    CHECK(r.out.empty());
  }

  SUBCASE("a failing query gives a partial exit and an error record") {
    // Query q_0001 asks for a blank culture label.
    auto batch = json::parse(slurp(f.files.batch));
    batch["queries"][1]["cultures"] = json::array({" "});
    std::ofstream(f.files.batch) << batch.dump();
    const auto r = run({"attribute", "--kb", f.kb, "--batch", f.files.batch.string(), "--backend", f.mock()});
    CHECK(r.code == cli::kExitPartial);
    bool saw_error = false;
    for (const auto& rec : records(r.out))
      if (rec["type"] == "error") {
        saw_error = true;
        CHECK(rec["query_id"] == "q_0001");
      }
    CHECK(saw_error);
  }

  SUBCASE("bad arguments") {
    CHECK(run({"attribute", "--kb", f.kb, "--batch", f.files.batch.string(), "--strategy", "nope"}).code ==
          cli::kExitFatal);
    CHECK(run({"attribute", "--kb", f.kb}).code == cli::kExitFatal);
    CHECK(run({"frobnicate"}).code == cli::kExitFatal);
    CHECK(run({"--help"}).code == cli::kExitOk);
  }
}

TEST_CASE("link") {
  CliFixture f;
  const auto r = run({"link", "--kb", f.kb, "--batch", f.files.batch.string(), "--strategy", "frequency_vt"});
  CHECK(r.code == cli::kExitOk);
  const auto recs = records(r.out);
  REQUIRE(recs.size() == 6);
  const auto batch = json::parse(slurp(f.files.batch));
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(recs[i + 1]["type"] == "link");
    CHECK(recs[i + 1]["selected"] == batch["queries"][i]["gold_entity_id"]);
  }
}

TEST_CASE("evaluate") {
  CliFixture f;
  const auto preds = (f.dir / "preds.jsonl").string();
  REQUIRE(run({"attribute", "--kb", f.kb, "--batch", f.files.batch.string(), "--backend", f.mock(), "--out", preds})
              .code == cli::kExitOk);

  SUBCASE("specific set: planted predictions are perfect") {
    const auto r = run({"evaluate", "--predictions", preds, "--gold", f.files.gold_specific.string()});
    CHECK(r.code == cli::kExitOk);
    const auto report = json::parse(r.out);
    CHECK(report["main"]["f1"] == 1.0);
    CHECK(report["threshold"] == 4);
    CHECK(report["sweep"].size() == 4);
  }

  SUBCASE("gold ratio") {
    const auto r = run({"evaluate", "--predictions", preds, "--gold", f.files.gold_specific.string(),
                        "--gold-context-predictions", preds});
    CHECK(json::parse(r.out)["gold_ratio"] == 100.0);
  }

  SUBCASE("threshold out of range") {
    CHECK(run({"evaluate", "--predictions", preds, "--gold", f.files.gold_specific.string(), "--threshold", "6"})
              .code == cli::kExitFatal);
  }

  SUBCASE("universal set: affine human means give r = 1") {
    // Human means 1 + 0.5·score for every country.
    const auto pred_map = records(slurp(preds));
    std::map<std::string, std::map<std::string, double>> means;
    for (const auto& rec : pred_map)
      if (rec["type"] == "score")
        means[rec["query_id"]][rec["culture"]] = 1.0 + 0.5 * (rec["score"].get<int>() - 1);
    // Each query has a different gold culture, so no country is constant.
    {
      std::ofstream u(f.dir / "universal.jsonl");
      for (const auto& [q, m] : means) u << json{{"query_id", q}, {"human_means", m}, {"split", "natural"}}.dump() << '\n';
    }
    const auto r = run({"evaluate", "--predictions", preds, "--universal", (f.dir / "universal.jsonl").string()});
    CHECK(r.code == cli::kExitOk);
    const auto report = json::parse(r.out);
    for (const auto& c : report["splits"]["natural"]["countries"])
      if (!c["pearson"].is_null()) CHECK(c["pearson"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(report["splits"]["natural"]["defined"].get<int>() >= 1);
  }

  SUBCASE("ratings aggregation") {
    std::ofstream(f.dir / "ratings.jsonl")
        << R"({"query_id":"u1","annotator":"a","country":"Japan","score":3})" << "\n"
        << R"({"query_id":"u1","annotator":"b","country":"Japan","score":5})" << "\n";
    const auto r = run({"evaluate", "--ratings", (f.dir / "ratings.jsonl").string()});
    CHECK(r.code == cli::kExitOk);
    CHECK(json::parse(r.out)["human_means"]["Japan"] == 4.0);
  }
}

TEST_CASE("bench-vel") {
  CliFixture f;
  const auto r = run({"bench-vel", "--kb", f.kb, "--batch", f.files.batch.string(), "--strategies",
                      "lemma_vt,frequency_vt"});
  CHECK(r.code == cli::kExitOk);
  const auto report = json::parse(r.out);
  CHECK(report["strategies"]["lemma_vt"]["acc@1"] == 1.0);
  CHECK(report["strategies"]["frequency_vt"]["acc@20"] == 1.0);
  CHECK_FALSE(report["strategies"].contains("gloss_t"));
}

TEST_CASE("config echo round trip") {
  cli::RunConfig c;
  c.kb = "kb";
  c.batch = "b.json";
  c.lambda = 0.25;
  c.out = "ignored";
  const auto back = cli::config_from_echo(cli::config_echo(c));
  CHECK(back.kb == "kb");
  CHECK(back.lambda == 0.25);
  CHECK(back.out.empty());
  CHECK(cli::config_echo(back) == cli::config_echo(c));
}
