#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ctxevo/chunker.hpp"
#include "ctxevo/llm_client.hpp"
#include "ctxevo/unit.hpp"

namespace ctxevo {

// How raw files are split into units during ingestion.
struct ChunkerConfig {
  enum class Mode { WholeFile, Fixed, Structural };

  Mode mode = Mode::WholeFile;
  std::size_t size = 1024;      // fixed-window token size
  std::size_t overlap = 200;    // fixed-window token overlap
  std::size_t ceiling = 1024;   // structural per-chunk token ceiling
  StructureHint hint = StructureHint::Code;

  void validate() const;
};

void to_json(nlohmann::json& j, const ChunkerConfig& c);
void from_json(const nlohmann::json& j, ChunkerConfig& c);

struct PoolManifest {
  std::string tokenizer;
  std::string unit_kind = "source_text";
  std::string source;
  ChunkerConfig chunker;
  std::vector<std::string> skipped;  // unreadable or duplicate inputs
};

void to_json(nlohmann::json& j, const PoolManifest& m);
void from_json(const nlohmann::json& j, PoolManifest& m);

// Immutable after construction; safe to share across threads.
class UnitPool {
 public:
  UnitPool() = default;
  explicit UnitPool(PoolManifest manifest) : manifest_(std::move(manifest)) {}

  // Returns false (and keeps the pool unchanged) when the id already exists.
  bool add(ContextUnit unit);

  std::size_t size() const { return units_.size(); }
  bool empty() const { return units_.empty(); }
  const std::vector<ContextUnit>& units() const { return units_; }
  const ContextUnit& at(std::size_t index) const { return units_.at(index); }
  const ContextUnit* find(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id) != nullptr; }

  const PoolManifest& manifest() const { return manifest_; }
  PoolManifest& manifest() { return manifest_; }

  // Hash of the ordered unit ids; keys manifests and resume checks.
  std::string fingerprint() const;

  void save(const std::filesystem::path& file) const;
  static UnitPool load(const std::filesystem::path& file);

 private:
  PoolManifest manifest_;
  std::vector<ContextUnit> units_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Walks `dir` in lexicographic path order and chunks every regular file.
// Unreadable files are recorded in the manifest and skipped; producing zero
// units is an error.
UnitPool ingest_directory(const std::filesystem::path& dir, UnitKind kind,
                          const ChunkerConfig& chunker,
                          const Tokenizer& tok = {});

struct TrajectoryRecord {
  std::string id;
  std::string text;
};

std::vector<TrajectoryRecord> load_trajectories_jsonl(
    const std::filesystem::path& file);

struct InsightExtraction {
  std::vector<ContextUnit> units;
  std::vector<std::string> warnings;  // empty responses etc.
  std::vector<std::string> failures;  // backend errors, partial results kept
};

// Prompts the extractor once per trajectory and splits each response into
// atomic insight units on `delimiter` lines. The template's {{trajectory}}
// placeholder receives the record text.
InsightExtraction extract_insights(
    const std::vector<TrajectoryRecord>& trajectories, ChatBackend& extractor,
    const std::string& prompt_template, const std::string& delimiter = "---");

}  // namespace ctxevo
