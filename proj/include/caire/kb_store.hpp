#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace caire {

inline constexpr std::string_view kKbFormatVersion = "kb-format/1";
inline constexpr std::array<char, 8> kEmbeddingMagic = {'C', 'A', 'I', 'R', 'E', 'E', 'M', 'B'};
inline constexpr double kNormTolerance = 1e-6;

enum class TextField { kLemma, kGloss, kArticle };

std::string_view to_string(TextField field);
std::optional<TextField> parse_text_field(std::string_view name);

struct EntityRecord {
  std::string entity_id;
  std::string lemma;
  std::string gloss;
  std::string article_text;
  std::vector<std::uint64_t> image_embedding_rows;
  std::map<TextField, std::uint64_t> text_embedding_rows;
  // Optional reference to the source image (no pixels are stored).
  std::string image_uri;

  bool operator==(const EntityRecord&) const = default;
};

// Dense row-major float32 matrix. Row owners live on the KnowledgeBase
// because ownership is a property of the KB, not of the raw payload.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::uint32_t dimension, std::vector<float> data);

  std::uint32_t dimension() const noexcept { return dimension_; }
  std::size_t rows() const noexcept { return dimension_ == 0 ? 0 : data_.size() / dimension_; }
  bool empty() const noexcept { return rows() == 0; }

  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * dimension_, dimension_};
  }
  std::span<float> mutable_row(std::size_t i) { return {data_.data() + i * dimension_, dimension_}; }
  const std::vector<float>& data() const noexcept { return data_; }

  // Returns true if every row already had unit norm within kNormTolerance.
  bool normalize_rows();
  bool rows_normalized() const;

 private:
  std::uint32_t dimension_ = 0;
  std::vector<float> data_;
};

struct FileEntry {
  std::string path;
  std::string sha256;
};

struct KbManifest {
  std::string version{kKbFormatVersion};
  std::uint32_t dimension = 0;
  bool prenormalized = true;
  std::uint64_t entity_count = 0;
  std::uint64_t image_rows = 0;
  std::uint64_t text_rows = 0;
  FileEntry entities;
  FileEntry image_matrix;
  FileEntry text_matrix;
};

// Immutable after construction; share it through a const pointer.
class KnowledgeBase {
 public:
  // Validates every invariant and normalizes both matrices.
  KnowledgeBase(std::vector<EntityRecord> entities, EmbeddingMatrix image_matrix,
                EmbeddingMatrix text_matrix);

  std::size_t size() const noexcept { return entities_.size(); }
  std::uint32_t dimension() const noexcept { return image_matrix_.dimension(); }
  const std::vector<EntityRecord>& entities() const noexcept { return entities_; }
  const EmbeddingMatrix& image_matrix() const noexcept { return image_matrix_; }
  const EmbeddingMatrix& text_matrix() const noexcept { return text_matrix_; }

  // Owning entity ids of an image row, in the order entities reference it.
  const std::vector<std::string>& image_row_owners(std::size_t row) const {
    return image_owners_.at(row);
  }

  const EntityRecord* find_entity(std::string_view entity_id) const;
  // Throws Error{kNotFound}.
  const EntityRecord& get_entity(std::string_view entity_id) const;

  // Text embedding of `field` for an entity, or empty span if absent.
  std::span<const float> text_embedding(const EntityRecord& entity, TextField field) const;

  // True when every source row was already unit-norm before ingest.
  bool source_prenormalized() const noexcept { return prenormalized_; }

 private:
  std::vector<EntityRecord> entities_;
  EmbeddingMatrix image_matrix_;
  EmbeddingMatrix text_matrix_;
  std::vector<std::vector<std::string>> image_owners_;
  std::unordered_map<std::string, std::size_t> by_id_;
  bool prenormalized_ = true;
};

using KbPtr = std::shared_ptr<const KnowledgeBase>;

// --- on-disk format -------------------------------------------------------

void write_embedding_file(const std::filesystem::path& path, const EmbeddingMatrix& matrix);
EmbeddingMatrix read_embedding_file(const std::filesystem::path& path);

void write_entity_table(const std::filesystem::path& path, const std::vector<EntityRecord>& entities);
std::vector<EntityRecord> read_entity_table(const std::filesystem::path& path);

std::string sha256_file(const std::filesystem::path& path);

KbManifest read_manifest(const std::filesystem::path& manifest_path);
void write_manifest(const std::filesystem::path& manifest_path, const KbManifest& manifest);

// Default file names used by write_kb and build_manifest.
inline constexpr std::string_view kManifestFile = "manifest.json";
inline constexpr std::string_view kEntitiesFile = "entities.jsonl";
inline constexpr std::string_view kImageMatrixFile = "image.emb";
inline constexpr std::string_view kTextMatrixFile = "text.emb";

// Writes the three payload files plus a manifest into `dir`. Returns the
// manifest path.
std::filesystem::path write_kb(const std::filesystem::path& dir, const std::vector<EntityRecord>& entities,
                               const EmbeddingMatrix& image_matrix, const EmbeddingMatrix& text_matrix);

// Validates the payload files in `dir` and (re)writes manifest.json with
// fresh checksums and counts.
KbManifest build_manifest(const std::filesystem::path& dir);

KbPtr load_kb(const std::filesystem::path& manifest_path);

}  // namespace caire
