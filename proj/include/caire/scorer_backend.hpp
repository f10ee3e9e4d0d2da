#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <utility>

namespace caire {

inline constexpr int kScoreLevels = 5;
inline constexpr double kDistributionTolerance = 1e-6;

// Prompt phrases the engine emits. Backends (including the mock) may key on
// them to locate the entity and target culture inside a prompt.
inline constexpr std::string_view kEntityMarker = "We have identified this concept to be closely associated with the image: ";
inline constexpr std::string_view kTargetMarker = "based on how culturally relevant the image is to ";
inline constexpr std::string_view kCompletionPrefix = "This text is relevant to ";

// Probabilities over score tokens 1..5 (index 0 is score 1).
struct ScoreDistribution {
  std::array<double, kScoreLevels> p{};

  // Throws Error{kProtocol} unless every p >= 0 and the sum is 1 within
  // kDistributionTolerance.
  void validate() const;
  // Score in 1..5; ties resolve to the lower score.
  int argmax() const;

  bool operator==(const ScoreDistribution&) const = default;
};

enum class BackendMode { kDistribution, kNll };
std::string_view to_string(BackendMode m);

struct ImagePayload {
  std::string bytes;  // raw bytes; sent base64-encoded
  std::string media_type;
  std::string uri;  // used instead of bytes when non-empty
};

struct BackendRequest {
  BackendMode mode = BackendMode::kDistribution;
  std::string prompt;
  std::optional<ImagePayload> image;
  std::string completion;  // required iff mode == kNll
  std::string request_id;

  void validate() const;
};

struct BackendResponse {
  std::string request_id;
  std::optional<ScoreDistribution> probs;
  std::optional<double> nll;
  std::string backend_id;
  double latency_ms = 0.0;
};

struct Capabilities {
  std::string backend_id;
  bool distribution = true;
  bool nll = true;
  bool image_b64 = false;
  bool image_uri = false;
};

// Throws Error{kProtocol} when the response does not answer the request.
void validate_response(const BackendRequest& request, const BackendResponse& response);

class ScorerBackend {
 public:
  virtual ~ScorerBackend() = default;
  virtual BackendResponse query(const BackendRequest& request) = 0;
  virtual Capabilities capabilities() = 0;
  virtual std::string id() const = 0;
};

// --- wire format (JSON over HTTP) -------------------------------------------

std::string encode_request(const BackendRequest& request);
BackendRequest decode_request(std::string_view body);
std::string encode_response(const BackendResponse& response);
BackendResponse decode_response(std::string_view body);
std::string encode_capabilities(const Capabilities& caps);
Capabilities decode_capabilities(std::string_view body);
std::string encode_error(std::string_view code, std::string_view message, bool retryable);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

// Serves a backend over the wire protocol without a socket: maps a POST
// /v1/score body to (HTTP status, response body). Used by the reference
// server and by protocol tests.
std::pair<int, std::string> handle_score(ScorerBackend& backend, std::string_view body);

// --- mock -------------------------------------------------------------------

struct PlantedTable {
  // Keys are "culture" or "culture|entity", matched case-insensitively as
  // substrings of the culture and entity markers of a request.
  std::map<std::string, ScoreDistribution> distributions;
  std::map<std::string, double> nll;
};

PlantedTable load_planted_table(const std::filesystem::path& path);
void save_planted_table(const std::filesystem::path& path, const PlantedTable& table);

// Fallback outputs for unmatched requests derive from
//   h = fnv1a64(le64(seed) ++ mode ++ 0x1F ++ prompt ++ 0x1F ++ completion
//               ++ 0x1F ++ image.uri ++ 0x1F ++ image.bytes)
// fed to a splitmix64 stream: distribution p_i ∝ 0.05 + u_i for five draws,
// nll = 0.5 + 7.5·u for one draw, where u = (next() >> 11) · 2^-53.
class MockBackend final : public ScorerBackend {
 public:
  MockBackend(std::uint64_t seed, PlantedTable table);

  BackendResponse query(const BackendRequest& request) override;
  Capabilities capabilities() override;
  std::string id() const override;

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  PlantedTable table_;
};

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t splitmix64(std::uint64_t& state);

// --- HTTP client ------------------------------------------------------------

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{100};
  double backoff_multiplier = 2.0;
  std::chrono::seconds timeout{60};
};

class HttpBackend final : public ScorerBackend {
 public:
  // `endpoint` is "http://host:port[/prefix]". `bearer_token` may be empty.
  HttpBackend(std::string endpoint, std::string bearer_token = {}, RetryPolicy retry = {},
              std::ptrdiff_t max_in_flight = 16);

  BackendResponse query(const BackendRequest& request) override;
  Capabilities capabilities() override;
  std::string id() const override { return "http:" + endpoint_; }

 private:
  std::string endpoint_;
  std::string host_;
  std::string prefix_;
  std::string token_;
  RetryPolicy retry_;
  std::counting_semaphore<1024> in_flight_;
};

// Parses "mock:<seed>[,<table>]" or an http(s) URL.
std::unique_ptr<ScorerBackend> make_backend(const std::string& spec, RetryPolicy retry = {},
                                            std::ptrdiff_t max_in_flight = 16);

}  // namespace caire
