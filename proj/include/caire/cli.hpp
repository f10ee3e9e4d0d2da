#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "caire/relevance_scoring.hpp"

namespace caire::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFatal = 1;
inline constexpr int kExitPartial = 2;

// Everything that determines an attribute/link run. Echoed as the first
// record of every output file; `caire attribute --replay <file>` reads it
// back.
struct RunConfig {
  std::string kb;
  std::string batch;
  std::size_t k = kDefaultTopK;
  std::string strategy = "lemma_vt";
  std::string context = "wiki_full";  // wiki_full | top20_titles | gold:<path> | none
  std::string mode = "numerical";     // numerical | loglik
  std::string backend = "mock:42";
  double lambda = 1.0;
  double floor = 0.0;
  std::size_t budget = kDefaultContextBudget;
  unsigned parallel = 1;
  std::string out;  // not part of the echo
};

std::string config_echo(const RunConfig& config);
RunConfig config_from_echo(const std::string& line);

// Entry point shared by the `caire` binary and the tests. `args` excludes
// the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace caire::cli
