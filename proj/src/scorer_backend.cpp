#include "caire/scorer_backend.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <httplib.h>
#include <json.hpp>
#include <thread>

#include "caire/error.hpp"

namespace caire {

using nlohmann::json;

// --- ScoreDistribution ------------------------------------------------------

void ScoreDistribution::validate() const {
  double sum = 0.0;
  for (double x : p) {
    if (!std::isfinite(x) || x < 0.0) throw Error(ErrorCode::kProtocol, "score distribution has a negative or non-finite entry");
    sum += x;
  }
  if (std::abs(sum - 1.0) > kDistributionTolerance)
    throw Error(ErrorCode::kProtocol, "score distribution sums to " + std::to_string(sum) + ", expected 1");
}

int ScoreDistribution::argmax() const {
  int best = 0;
  for (int k = 1; k < kScoreLevels; ++k)
    if (p[k] > p[best]) best = k;
  return best + 1;
}

std::string_view to_string(BackendMode m) { return m == BackendMode::kDistribution ? "distribution" : "nll"; }

static BackendMode parse_mode(const std::string& s) {
  if (s == "distribution") return BackendMode::kDistribution;
  if (s == "nll") return BackendMode::kNll;
  throw Error(ErrorCode::kProtocol, "unknown mode '" + s + "'");
}

void BackendRequest::validate() const {
  if (request_id.empty()) throw Error(ErrorCode::kProtocol, "request_id is required");
  if (mode == BackendMode::kNll && completion.empty())
    throw Error(ErrorCode::kProtocol, "completion is required in nll mode");
  if (mode == BackendMode::kDistribution && !completion.empty())
    throw Error(ErrorCode::kProtocol, "completion is only valid in nll mode");
}

void validate_response(const BackendRequest& request, const BackendResponse& response) {
  if (response.request_id != request.request_id)
    throw Error(ErrorCode::kProtocol,
                "response request_id '" + response.request_id + "' does not echo '" + request.request_id + "'");
  if (request.mode == BackendMode::kDistribution) {
    if (!response.probs || response.nll) throw Error(ErrorCode::kProtocol, "distribution request answered without probs");
    response.probs->validate();
  } else {
    if (!response.nll || response.probs) throw Error(ErrorCode::kProtocol, "nll request answered without nll");
    if (!std::isfinite(*response.nll)) throw Error(ErrorCode::kProtocol, "nll is not finite");
  }
}

// --- wire format ------------------------------------------------------------

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(ErrorCode::kProtocol, "base64 payload length is not a multiple of 4");
  std::string out(3 * text.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorCode::kProtocol, "invalid base64 payload");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string encode_request(const BackendRequest& r) {
  json j;
  j["mode"] = to_string(r.mode);
  j["prompt"] = r.prompt;
  j["request_id"] = r.request_id;
  if (r.mode == BackendMode::kNll) j["completion"] = r.completion;
  if (r.image) {
    if (!r.image->uri.empty()) {
      j["image_uri"] = r.image->uri;
    } else {
      j["image_b64"] = base64_encode(r.image->bytes);
      if (!r.image->media_type.empty()) j["media_type"] = r.image->media_type;
    }
  }
  return j.dump();
}

BackendRequest decode_request(std::string_view body) {
  BackendRequest r;
  try {
    const json j = json::parse(body);
    r.mode = parse_mode(j.at("mode").get<std::string>());
    r.prompt = j.at("prompt").get<std::string>();
    r.request_id = j.at("request_id").get<std::string>();
    r.completion = j.value("completion", "");
    if (j.contains("image_uri")) {
      r.image = ImagePayload{{}, {}, j["image_uri"].get<std::string>()};
    } else if (j.contains("image_b64")) {
      r.image = ImagePayload{base64_decode(j["image_b64"].get<std::string>()), j.value("media_type", ""), {}};
    }
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kProtocol, std::string("malformed request: ") + ex.what());
  }
  r.validate();
  return r;
}

std::string encode_response(const BackendResponse& r) {
  json j;
  j["request_id"] = r.request_id;
  j["backend"] = r.backend_id;
  j["latency_ms"] = r.latency_ms;
  if (r.probs) j["probs"] = r.probs->p;
  if (r.nll) j["nll"] = *r.nll;
  return j.dump();
}

static ErrorCode error_code_from_wire(const std::string& code) {
  if (code == "unsupported") return ErrorCode::kUnsupported;
  if (code == "timeout") return ErrorCode::kTimeout;
  if (code == "transport") return ErrorCode::kTransport;
  return ErrorCode::kProtocol;
}

BackendResponse decode_response(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kProtocol, std::string("malformed response: ") + ex.what());
  }
  if (j.contains("error")) {
    const auto& e = j["error"];
    throw Error(error_code_from_wire(e.value("code", "protocol")), "backend error: " + e.value("message", ""),
                e.value("retryable", false));
  }
  BackendResponse r;
  try {
    r.request_id = j.at("request_id").get<std::string>();
    r.backend_id = j.value("backend", "");
    r.latency_ms = j.value("latency_ms", 0.0);
    if (j.contains("probs")) {
      const auto& p = j["probs"];
      if (!p.is_array() || p.size() != kScoreLevels)
        throw Error(ErrorCode::kProtocol, "probs must be an array of 5 numbers");
      ScoreDistribution d;
      for (int k = 0; k < kScoreLevels; ++k) d.p[k] = p[k].get<double>();
      r.probs = d;
    }
    if (j.contains("nll")) r.nll = j["nll"].get<double>();
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kProtocol, std::string("malformed response: ") + ex.what());
  }
  return r;
}

std::string encode_capabilities(const Capabilities& c) {
  json modes = json::array();
  if (c.distribution) modes.push_back("distribution");
  if (c.nll) modes.push_back("nll");
  return json{{"backend", c.backend_id}, {"modes", modes}, {"image_b64", c.image_b64}, {"image_uri", c.image_uri}}
      .dump();
}

Capabilities decode_capabilities(std::string_view body) {
  try {
    const json j = json::parse(body);
    Capabilities c;
    c.backend_id = j.value("backend", "");
    const auto modes = j.at("modes").get<std::vector<std::string>>();
    c.distribution = std::find(modes.begin(), modes.end(), "distribution") != modes.end();
    c.nll = std::find(modes.begin(), modes.end(), "nll") != modes.end();
    c.image_b64 = j.value("image_b64", false);
    c.image_uri = j.value("image_uri", false);
    return c;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kProtocol, std::string("malformed capabilities: ") + ex.what());
  }
}

std::string encode_error(std::string_view code, std::string_view message, bool retryable) {
  return json{{"error", {{"code", code}, {"message", message}, {"retryable", retryable}}}}.dump();
}

std::pair<int, std::string> handle_score(ScorerBackend& backend, std::string_view body) {
  try {
    const BackendRequest request = decode_request(body);
    BackendResponse response = backend.query(request);
    validate_response(request, response);
    return {200, encode_response(response)};
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::kUnsupported: return {501, encode_error("unsupported", e.what(), false)};
      case ErrorCode::kTransport:
      case ErrorCode::kTimeout: return {503, encode_error(to_string(e.code()), e.what(), true)};
      default: return {400, encode_error("protocol", e.what(), false)};
    }
  }
}

// --- mock -------------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

static std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Text following `marker` up to the end of its line (or `stop`).
static std::optional<std::string> segment_after(std::string_view text, std::string_view marker, char stop) {
  const auto pos = text.find(marker);
  if (pos == std::string_view::npos) return std::nullopt;
  auto rest = text.substr(pos + marker.size());
  rest = rest.substr(0, std::min(rest.find('\n'), rest.find(stop)));
  return std::string(rest);
}

MockBackend::MockBackend(std::uint64_t seed, PlantedTable table) : seed_(seed), table_(std::move(table)) {
  for (const auto& [key, d] : table_.distributions) {
    try {
      d.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::kInvalidArgument, "planted distribution '" + key + "': " + e.what());
    }
  }
  for (const auto& [key, v] : table_.nll)
    if (!std::isfinite(v)) throw Error(ErrorCode::kInvalidArgument, "planted nll '" + key + "' is not finite");
}

std::string MockBackend::id() const { return "mock:" + std::to_string(seed_); }

Capabilities MockBackend::capabilities() { return {id(), true, true, true, true}; }

template <typename Value>
static const Value* match_planted(const std::map<std::string, Value>& table, const std::string& culture,
                                  const std::string& entity) {
  const Value* best = nullptr;
  int best_parts = 0;
  std::size_t best_len = 0;
  // std::map iterates keys in ascending order, so the first of equally good
  // matches wins.
  for (const auto& [key, value] : table) {
    const std::string k = lower(key);
    const auto bar = k.find('|');
    const std::string culture_key = k.substr(0, bar);
    const int parts = bar == std::string::npos ? 1 : 2;
    if (culture_key.empty() || culture.find(culture_key) == std::string::npos) continue;
    if (parts == 2) {
      const std::string entity_key = k.substr(bar + 1);
      if (entity_key.empty() || entity.find(entity_key) == std::string::npos) continue;
    }
    if (parts > best_parts || (parts == best_parts && k.size() > best_len)) {
      best = &value;
      best_parts = parts;
      best_len = k.size();
    }
  }
  return best;
}

BackendResponse MockBackend::query(const BackendRequest& request) {
  request.validate();
  BackendResponse r;
  r.request_id = request.request_id;
  r.backend_id = id();

  std::string culture;
  std::string entity;
  if (request.mode == BackendMode::kDistribution) {
    culture = lower(segment_after(request.prompt, kTargetMarker, ':').value_or(request.prompt));
    entity = lower(segment_after(request.prompt, kEntityMarker, '\n').value_or(request.prompt));
  } else {
    culture = lower(segment_after(request.completion, kCompletionPrefix, '\n').value_or(request.completion));
    entity = lower(request.prompt);
  }

  std::string buf(8, '\0');
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((seed_ >> (8 * i)) & 0xff);
  std::uint64_t h = fnv1a64(buf);
  h = fnv1a64(to_string(request.mode), h);
  const std::string_view uri = request.image ? std::string_view(request.image->uri) : std::string_view();
  const std::string_view bytes = request.image ? std::string_view(request.image->bytes) : std::string_view();
  for (std::string_view part : {std::string_view(request.prompt), std::string_view(request.completion), uri, bytes}) {
    h = fnv1a64("\x1f", h);
    h = fnv1a64(part, h);
  }
  auto uniform = [&h] { return static_cast<double>(splitmix64(h) >> 11) * 0x1.0p-53; };

  if (request.mode == BackendMode::kDistribution) {
    if (const auto* d = match_planted(table_.distributions, culture, entity)) {
      r.probs = *d;
    } else {
      ScoreDistribution d2;
      double sum = 0.0;
      for (auto& x : d2.p) sum += (x = 0.05 + uniform());
      for (auto& x : d2.p) x /= sum;
      r.probs = d2;
    }
  } else {
    if (const auto* v = match_planted(table_.nll, culture, entity))
      r.nll = *v;
    else
      r.nll = 0.5 + 7.5 * uniform();
  }
  return r;
}

PlantedTable load_planted_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "missing planted table " + path.string());
  PlantedTable t;
  try {
    const json j = json::parse(in);
    if (j.contains("distribution")) {
      for (const auto& [key, value] : j["distribution"].items()) {
        if (!value.is_array() || value.size() != kScoreLevels)
          throw Error(ErrorCode::kInvalidArgument, "planted distribution '" + key + "' must have 5 entries");
        ScoreDistribution d;
        for (int k = 0; k < kScoreLevels; ++k) d.p[k] = value[k].get<double>();
        t.distributions[key] = d;
      }
    }
    if (j.contains("nll"))
      for (const auto& [key, value] : j["nll"].items()) t.nll[key] = value.get<double>();
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kParse, path.string() + ": " + ex.what());
  }
  return t;
}

void save_planted_table(const std::filesystem::path& path, const PlantedTable& table) {
  json j;
  j["distribution"] = json::object();
  for (const auto& [key, d] : table.distributions) j["distribution"][key] = d.p;
  j["nll"] = json::object();
  for (const auto& [key, v] : table.nll) j["nll"][key] = v;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

// --- HTTP client ------------------------------------------------------------

HttpBackend::HttpBackend(std::string endpoint, std::string bearer_token, RetryPolicy retry,
                         std::ptrdiff_t max_in_flight)
    : endpoint_(std::move(endpoint)),
      token_(std::move(bearer_token)),
      retry_(retry),
      in_flight_(std::clamp<std::ptrdiff_t>(max_in_flight, 1, 1024)) {
  const auto scheme = endpoint_.find("://");
  if (scheme == std::string::npos || endpoint_.substr(0, scheme) != "http")
    throw Error(ErrorCode::kInvalidArgument, "backend endpoint must be an http:// URL: " + endpoint_);
  const auto path = endpoint_.find('/', scheme + 3);
  host_ = endpoint_.substr(0, path);
  prefix_ = path == std::string::npos ? "" : endpoint_.substr(path);
  while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  if (retry_.max_attempts < 1) retry_.max_attempts = 1;
}

namespace {

struct Permit {
  std::counting_semaphore<1024>& s;
  explicit Permit(std::counting_semaphore<1024>& sem) : s(sem) { s.acquire(); }
  ~Permit() { s.release(); }
};

Error transport_error(const httplib::Error err, const std::string& endpoint) {
  const bool timeout = err == httplib::Error::Read || err == httplib::Error::Write ||
                       err == httplib::Error::ConnectionTimeout;
  return Error(timeout ? ErrorCode::kTimeout : ErrorCode::kTransport,
               "backend " + endpoint + ": " + httplib::to_string(err), true);
}

}  // namespace

BackendResponse HttpBackend::query(const BackendRequest& request) {
  request.validate();
  const std::string body = encode_request(request);
  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

  auto backoff = retry_.initial_backoff;
  std::optional<Error> last;
  for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(backoff);
      backoff = std::chrono::milliseconds(static_cast<long long>(backoff.count() * retry_.backoff_multiplier));
    }
    Permit permit(in_flight_);
    httplib::Client client(host_);
    client.set_connection_timeout(retry_.timeout);
    client.set_read_timeout(retry_.timeout);
    client.set_write_timeout(retry_.timeout);
    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(prefix_ + "/v1/score", headers, body, "application/json");
    const double latency =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (!res) {
      last = transport_error(res.error(), endpoint_);
      continue;
    }
    if (res->status == 200) {
      BackendResponse response = decode_response(res->body);
      validate_response(request, response);
      response.latency_ms = latency;
      return response;
    }
    const bool retryable_status = res->status >= 500 || res->status == 429;
    try {
      decode_response(res->body);
      last = Error(ErrorCode::kProtocol, "backend returned HTTP " + std::to_string(res->status), retryable_status);
    } catch (const Error& e) {
      last = Error(e.code(), e.what(), e.retryable() || retryable_status);
    }
    if (!last->retryable()) throw *last;
  }
  throw *last;
}

Capabilities HttpBackend::capabilities() {
  httplib::Client client(host_);
  client.set_connection_timeout(retry_.timeout);
  client.set_read_timeout(retry_.timeout);
  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
  auto res = client.Get(prefix_ + "/v1/capabilities", headers);
  if (!res) throw transport_error(res.error(), endpoint_);
  if (res->status != 200)
    throw Error(ErrorCode::kProtocol, "capabilities returned HTTP " + std::to_string(res->status));
  return decode_capabilities(res->body);
}

std::unique_ptr<ScorerBackend> make_backend(const std::string& spec, RetryPolicy retry, std::ptrdiff_t max_in_flight) {
  if (spec.rfind("mock:", 0) == 0) {
    const std::string rest = spec.substr(5);
    const auto comma = rest.find(',');
    const std::string seed_text = rest.substr(0, comma);
    std::uint64_t seed = 0;
    try {
      std::size_t used = 0;
      seed = std::stoull(seed_text, &used);
      if (used != seed_text.size()) throw std::invalid_argument(seed_text);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidArgument, "bad mock seed in '" + spec + "'");
    }
    PlantedTable table;
    if (comma != std::string::npos) table = load_planted_table(rest.substr(comma + 1));
    return std::make_unique<MockBackend>(seed, std::move(table));
  }
  const char* token = std::getenv("CAIRE_BACKEND_TOKEN");
  return std::make_unique<HttpBackend>(spec, token ? token : "", retry, max_in_flight);
}

}  // namespace caire
