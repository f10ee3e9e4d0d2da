#include "caire/kb_store.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "caire/error.hpp"

namespace caire {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "embedding files are little-endian float32");

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "io";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kChecksum: return "checksum";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kDanglingReference: return "dangling_reference";
    case ErrorCode::kDuplicateId: return "duplicate_id";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kEmpty: return "empty";
    case ErrorCode::kProtocol: return "protocol";
    case ErrorCode::kTransport: return "transport";
    case ErrorCode::kTimeout: return "timeout";
    case ErrorCode::kUnsupported: return "unsupported";
    case ErrorCode::kUndefined: return "undefined";
    case ErrorCode::kKeyMismatch: return "key_mismatch";
  }
  return "unknown";
}

std::string_view to_string(TextField field) {
  switch (field) {
    case TextField::kLemma: return "lemma";
    case TextField::kGloss: return "gloss";
    case TextField::kArticle: return "article";
  }
  return "unknown";
}

std::optional<TextField> parse_text_field(std::string_view name) {
  if (name == "lemma") return TextField::kLemma;
  if (name == "gloss") return TextField::kGloss;
  if (name == "article") return TextField::kArticle;
  return std::nullopt;
}

// --- EmbeddingMatrix -------------------------------------------------------

EmbeddingMatrix::EmbeddingMatrix(std::uint32_t dimension, std::vector<float> data)
    : dimension_(dimension), data_(std::move(data)) {
  if (dimension_ == 0) throw Error(ErrorCode::kInvalidArgument, "embedding dimension must be positive");
  if (data_.size() % dimension_ != 0)
    throw Error(ErrorCode::kInvalidArgument, "embedding payload is not a whole number of rows");
}

static double row_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

bool EmbeddingMatrix::normalize_rows() {
  bool already = true;
  for (std::size_t r = 0; r < rows(); ++r) {
    auto v = mutable_row(r);
    const double n = row_norm(v);
    if (!(n > 0.0) || !std::isfinite(n))
      throw Error(ErrorCode::kInvalidArgument, "row " + std::to_string(r) + " has zero or non-finite norm");
    if (std::abs(n - 1.0) <= kNormTolerance) continue;
    already = false;
    for (float& x : v) x = static_cast<float>(static_cast<double>(x) / n);
  }
  return already;
}

bool EmbeddingMatrix::rows_normalized() const {
  for (std::size_t r = 0; r < rows(); ++r)
    if (std::abs(row_norm(row(r)) - 1.0) > kNormTolerance) return false;
  return true;
}

// --- KnowledgeBase ----------------------------------------------------------

KnowledgeBase::KnowledgeBase(std::vector<EntityRecord> entities, EmbeddingMatrix image_matrix,
                             EmbeddingMatrix text_matrix)
    : entities_(std::move(entities)), image_matrix_(std::move(image_matrix)), text_matrix_(std::move(text_matrix)) {
  if (image_matrix_.dimension() != text_matrix_.dimension())
    throw Error(ErrorCode::kDimensionMismatch, "image matrix dimension " + std::to_string(image_matrix_.dimension()) +
                                                   " != text matrix dimension " +
                                                   std::to_string(text_matrix_.dimension()));

  image_owners_.resize(image_matrix_.rows());
  by_id_.reserve(entities_.size());
  for (std::size_t i = 0; i < entities_.size(); ++i) {
    const auto& e = entities_[i];
    if (e.entity_id.empty()) throw Error(ErrorCode::kInvalidArgument, "entity at line " + std::to_string(i + 1) + " has empty entity_id");
    if (!by_id_.emplace(e.entity_id, i).second)
      throw Error(ErrorCode::kDuplicateId, "duplicate entity_id '" + e.entity_id + "'");
    if (e.lemma.empty()) throw Error(ErrorCode::kInvalidArgument, "entity '" + e.entity_id + "' has empty lemma");
    for (auto row : e.image_embedding_rows) {
      if (row >= image_matrix_.rows())
        throw Error(ErrorCode::kDanglingReference, "entity '" + e.entity_id + "' references image row " +
                                                       std::to_string(row) + " but the image matrix has " +
                                                       std::to_string(image_matrix_.rows()) + " rows");
      image_owners_[row].push_back(e.entity_id);
    }
    for (const auto& [field, row] : e.text_embedding_rows) {
      if (row >= text_matrix_.rows())
        throw Error(ErrorCode::kDanglingReference, "entity '" + e.entity_id + "' references text row " +
                                                       std::to_string(row) + " (" + std::string(to_string(field)) +
                                                       ") but the text matrix has " +
                                                       std::to_string(text_matrix_.rows()) + " rows");
    }
  }
  for (std::size_t r = 0; r < image_owners_.size(); ++r)
    if (image_owners_[r].empty())
      throw Error(ErrorCode::kDanglingReference, "image row " + std::to_string(r) + " is not owned by any entity");

  const bool img_ok = image_matrix_.normalize_rows();
  const bool txt_ok = text_matrix_.normalize_rows();
  prenormalized_ = img_ok && txt_ok;
}

const EntityRecord* KnowledgeBase::find_entity(std::string_view entity_id) const {
  auto it = by_id_.find(std::string(entity_id));
  return it == by_id_.end() ? nullptr : &entities_[it->second];
}

const EntityRecord& KnowledgeBase::get_entity(std::string_view entity_id) const {
  if (const auto* e = find_entity(entity_id)) return *e;
  throw Error(ErrorCode::kNotFound, "unknown entity_id '" + std::string(entity_id) + "'");
}

std::span<const float> KnowledgeBase::text_embedding(const EntityRecord& entity, TextField field) const {
  auto it = entity.text_embedding_rows.find(field);
  if (it == entity.text_embedding_rows.end()) return {};
  return text_matrix_.row(it->second);
}

// --- embedding files --------------------------------------------------------

void write_embedding_file(const fs::path& path, const EmbeddingMatrix& matrix) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  const std::uint32_t dim = matrix.dimension();
  const std::uint64_t rows = matrix.rows();
  out.write(kEmbeddingMagic.data(), kEmbeddingMagic.size());
  out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
  out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
  out.write(reinterpret_cast<const char*>(matrix.data().data()),
            static_cast<std::streamsize>(matrix.data().size() * sizeof(float)));
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

EmbeddingMatrix read_embedding_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "missing embedding file " + path.string());
  std::array<char, 8> magic{};
  std::uint32_t dim = 0;
  std::uint64_t rows = 0;
  in.read(magic.data(), magic.size());
  in.read(reinterpret_cast<char*>(&dim), sizeof dim);
  in.read(reinterpret_cast<char*>(&rows), sizeof rows);
  if (!in) throw Error(ErrorCode::kParse, path.string() + ": truncated header");
  if (magic != kEmbeddingMagic) throw Error(ErrorCode::kParse, path.string() + ": bad magic");
  if (dim == 0) throw Error(ErrorCode::kParse, path.string() + ": zero dimension");

  const auto header = static_cast<std::uintmax_t>(magic.size() + sizeof dim + sizeof rows);
  const auto expected = header + rows * dim * sizeof(float);
  if (fs::file_size(path) != expected)
    throw Error(ErrorCode::kParse, path.string() + ": payload size does not match header (" + std::to_string(rows) +
                                       " rows x " + std::to_string(dim) + ")");

  std::vector<float> data(rows * dim);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!in) throw Error(ErrorCode::kIo, path.string() + ": short read");
  return EmbeddingMatrix(dim, std::move(data));
}

// --- entity table -----------------------------------------------------------

static json entity_to_json(const EntityRecord& e) {
  json j;
  j["entity_id"] = e.entity_id;
  j["lemma"] = e.lemma;
  j["gloss"] = e.gloss;
  j["article_text"] = e.article_text;
  j["image_rows"] = e.image_embedding_rows;
  json text = json::object();
  for (const auto& [field, row] : e.text_embedding_rows) text[std::string(to_string(field))] = row;
  j["text_rows"] = std::move(text);
  if (!e.image_uri.empty()) j["image_uri"] = e.image_uri;
  return j;
}

static EntityRecord entity_from_json(const json& j, std::size_t line) {
  auto fail = [&](const std::string& what) {
    return Error(ErrorCode::kParse, "entity table line " + std::to_string(line) + ": " + what);
  };
  if (!j.is_object()) throw fail("record is not an object");
  EntityRecord e;
  try {
    e.entity_id = j.at("entity_id").get<std::string>();
    e.lemma = j.at("lemma").get<std::string>();
    e.gloss = j.value("gloss", "");
    e.article_text = j.value("article_text", "");
    e.image_uri = j.value("image_uri", "");
    if (j.contains("image_rows")) e.image_embedding_rows = j["image_rows"].get<std::vector<std::uint64_t>>();
    if (j.contains("text_rows")) {
      for (const auto& [key, value] : j["text_rows"].items()) {
        auto field = parse_text_field(key);
        if (!field) throw fail("unknown text field '" + key + "'");
        e.text_embedding_rows[*field] = value.get<std::uint64_t>();
      }
    }
  } catch (const json::exception& ex) {
    throw fail(ex.what());
  }
  return e;
}

void write_entity_table(const fs::path& path, const std::vector<EntityRecord>& entities) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  for (const auto& e : entities) out << entity_to_json(e).dump() << '\n';
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

std::vector<EntityRecord> read_entity_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "missing entity table " + path.string());
  std::vector<EntityRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& ex) {
      throw Error(ErrorCode::kParse, "entity table line " + std::to_string(lineno) + ": " + ex.what());
    }
    out.push_back(entity_from_json(j, lineno));
  }
  return out;
}

// --- checksums & manifest ---------------------------------------------------

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "missing file " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xf]);
  }
  return hex;
}

KbManifest read_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::kIo, "missing manifest " + manifest_path.string());
  KbManifest m;
  try {
    const json j = json::parse(in);
    m.version = j.at("version").get<std::string>();
    m.dimension = j.at("dimension").get<std::uint32_t>();
    m.prenormalized = j.value("prenormalized", true);
    const auto& counts = j.at("counts");
    m.entity_count = counts.at("entities").get<std::uint64_t>();
    m.image_rows = counts.at("image_rows").get<std::uint64_t>();
    m.text_rows = counts.at("text_rows").get<std::uint64_t>();
    const auto& files = j.at("files");
    auto entry = [&](const char* key) {
      const auto& f = files.at(key);
      return FileEntry{f.at("path").get<std::string>(), f.at("sha256").get<std::string>()};
    };
    m.entities = entry("entities");
    m.image_matrix = entry("image_matrix");
    m.text_matrix = entry("text_matrix");
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kParse, manifest_path.string() + ": " + ex.what());
  }
  if (m.version != kKbFormatVersion)
    throw Error(ErrorCode::kParse, manifest_path.string() + ": unsupported version '" + m.version + "'");
  return m;
}

void write_manifest(const fs::path& manifest_path, const KbManifest& m) {
  json j;
  j["version"] = m.version;
  j["dimension"] = m.dimension;
  j["prenormalized"] = m.prenormalized;
  j["counts"] = {{"entities", m.entity_count}, {"image_rows", m.image_rows}, {"text_rows", m.text_rows}};
  auto entry = [](const FileEntry& f) { return json{{"path", f.path}, {"sha256", f.sha256}}; };
  j["files"] = {{"entities", entry(m.entities)},
                {"image_matrix", entry(m.image_matrix)},
                {"text_matrix", entry(m.text_matrix)}};
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + manifest_path.string() + " for writing");
  out << j.dump(2) << '\n';
}

KbManifest build_manifest(const fs::path& dir) {
  KbManifest m;
  m.entities.path = std::string(kEntitiesFile);
  m.image_matrix.path = std::string(kImageMatrixFile);
  m.text_matrix.path = std::string(kTextMatrixFile);

  auto entities = read_entity_table(dir / m.entities.path);
  auto image = read_embedding_file(dir / m.image_matrix.path);
  auto text = read_embedding_file(dir / m.text_matrix.path);
  const bool prenorm = image.rows_normalized() && text.rows_normalized();
  m.dimension = image.dimension();
  m.entity_count = entities.size();
  m.image_rows = image.rows();
  m.text_rows = text.rows();
  // Full invariant check before publishing checksums.
  KnowledgeBase kb(std::move(entities), std::move(image), std::move(text));
  m.prenormalized = prenorm;

  m.entities.sha256 = sha256_file(dir / m.entities.path);
  m.image_matrix.sha256 = sha256_file(dir / m.image_matrix.path);
  m.text_matrix.sha256 = sha256_file(dir / m.text_matrix.path);
  write_manifest(dir / kManifestFile, m);
  return m;
}

fs::path write_kb(const fs::path& dir, const std::vector<EntityRecord>& entities, const EmbeddingMatrix& image_matrix,
                  const EmbeddingMatrix& text_matrix) {
  fs::create_directories(dir);
  write_entity_table(dir / kEntitiesFile, entities);
  write_embedding_file(dir / kImageMatrixFile, image_matrix);
  write_embedding_file(dir / kTextMatrixFile, text_matrix);
  build_manifest(dir);
  return dir / kManifestFile;
}

KbPtr load_kb(const fs::path& manifest_path) {
  const KbManifest m = read_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();

  auto verify = [&](const FileEntry& f) {
    const fs::path p = base / f.path;
    if (!fs::exists(p)) throw Error(ErrorCode::kIo, "missing file " + p.string());
    const std::string actual = sha256_file(p);
    if (actual != f.sha256)
      throw Error(ErrorCode::kChecksum, "checksum mismatch for " + p.string() + ": manifest " + f.sha256 +
                                            ", file " + actual);
    return p;
  };
  const auto entities_path = verify(m.entities);
  const auto image_path = verify(m.image_matrix);
  const auto text_path = verify(m.text_matrix);

  auto entities = read_entity_table(entities_path);
  auto image = read_embedding_file(image_path);
  auto text = read_embedding_file(text_path);

  if (image.dimension() != m.dimension)
    throw Error(ErrorCode::kDimensionMismatch, image_path.string() + ": dimension " +
                                                   std::to_string(image.dimension()) + " but manifest says " +
                                                   std::to_string(m.dimension));
  if (entities.size() != m.entity_count || image.rows() != m.image_rows || text.rows() != m.text_rows)
    throw Error(ErrorCode::kParse, manifest_path.string() + ": counts do not match loaded data");

  return std::make_shared<const KnowledgeBase>(std::move(entities), std::move(image), std::move(text));
}

}  // namespace caire
