#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ctxevo/fitness.hpp"
#include "ctxevo/unit_pool.hpp"

namespace ctxevo::testing {

// Pool of n units with distinct single-word texts "w000" .. ; unit ids are
// content hashes, so tests address units via pool.at(i).id.
inline UnitPool make_pool(std::size_t n, const std::string& prefix = "w") {
  PoolManifest manifest;
  manifest.tokenizer = Tokenizer{}.name();
  manifest.source = "synthetic";
  UnitPool pool(manifest);
  for (std::size_t i = 0; i < n; ++i) {
    char buffer[16];
    std::snprintf(buffer, sizeof(buffer), "%03zu", i);
    SourceRef ref;
    ref.note = "synthetic";
    pool.add(ContextUnit::make(UnitKind::SourceText, prefix + buffer, ref));
  }
  return pool;
}

inline std::vector<std::string> pool_ids(const UnitPool& pool) {
  std::vector<std::string> ids;
  ids.reserve(pool.size());
  for (const auto& unit : pool.units()) ids.push_back(unit.id);
  return ids;
}

// Scratch directory under the system temp dir, wiped on construction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

inline void write_file(const std::filesystem::path& file,
                       const std::string& content) {
  std::ofstream out(file);
  out << content;
}

inline std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

// Evaluator wrapper that counts how often the inner evaluator runs; used to
// verify that cache hits never reach the backend.
class CountingEvaluator : public Evaluator {
 public:
  explicit CountingEvaluator(Evaluator& inner) : inner_(inner) {}
  std::string id() const override { return inner_.id(); }
  EvalOutcome evaluate(const CandidateContext& context, const UnitPool& pool,
                       const TaskSet& tasks) override {
    ++calls;
    return inner_.evaluate(context, pool, tasks);
  }
  int calls = 0;

 private:
  Evaluator& inner_;
};

}  // namespace ctxevo::testing
