#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctxevo/genome.hpp"
#include "ctxevo/llm_client.hpp"

namespace ctxevo {

// How a task response is scored:
//   exact    - trimmed response must equal the payload, scores {0,1}
//   contains - response must contain the payload substring, scores {0,1}
//   checker  - payload is a shell command fed {id,input,response} JSON on
//              stdin and printing a score in [0,1]
struct GraderSpec {
  enum class Type { Exact, Contains, Checker };
  Type type = Type::Exact;
  std::string payload;
};

void to_json(nlohmann::json& j, const GraderSpec& g);
void from_json(const nlohmann::json& j, GraderSpec& g);

struct TaskInstance {
  std::string id;
  std::string input;
  GraderSpec grader;
};

void to_json(nlohmann::json& j, const TaskInstance& t);
void from_json(const nlohmann::json& j, TaskInstance& t);

class TaskSet {
 public:
  // Throws UsageError when empty or when ids repeat.
  static TaskSet from_tasks(std::vector<TaskInstance> tasks);
  // JSONL, one task per line: {id, input, grader{type, payload}}.
  static TaskSet load_jsonl(const std::filesystem::path& file);
  void save_jsonl(const std::filesystem::path& file) const;

  const std::vector<TaskInstance>& tasks() const { return tasks_; }
  std::size_t size() const { return tasks_.size(); }
  std::string fingerprint() const { return fingerprint_; }

 private:
  std::vector<TaskInstance> tasks_;
  std::string fingerprint_;
};

// Scores a response against a grader. Checker failures score 0 and report
// through `error`.
double grade_response(const std::string& response, const GraderSpec& grader,
                      const std::string& task_id = {},
                      const std::string& task_input = {},
                      std::string* error = nullptr);

struct EvalOutcome {
  std::vector<double> per_task;        // each in [0,1]
  double aggregate = 0.0;              // arithmetic mean of per_task
  std::vector<std::string> failed_task_ids;
  bool cache_hit = false;              // set on retrieval, not persisted
};

void to_json(nlohmann::json& j, const EvalOutcome& o);
void from_json(const nlohmann::json& j, EvalOutcome& o);

class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual std::string id() const = 0;
  // Must be safe for concurrent calls on distinct contexts.
  virtual EvalOutcome evaluate(const CandidateContext& context,
                               const UnitPool& pool, const TaskSet& tasks) = 0;
};

struct SynergyBonus {
  std::string a;
  std::string b;
  double bonus = 0.0;
};

// Deterministic synthetic fitness landscape: target coverage minus a
// distraction penalty plus optional pairwise synergy bonuses, clamped to
// [0,1]. Synergies reward specific unit combinations so that greedy
// selection is not automatically optimal.
struct CoverageOracleConfig {
  std::vector<std::string> target_ids;
  double distraction_penalty = 0.25;
  std::vector<SynergyBonus> synergies;
};

void to_json(nlohmann::json& j, const CoverageOracleConfig& c);
void from_json(const nlohmann::json& j, CoverageOracleConfig& c);

class CoverageOracle {
 public:
  // Throws UsageError when the target set is empty.
  explicit CoverageOracle(CoverageOracleConfig config);
  static CoverageOracle load(const std::filesystem::path& file);

  double score(const CandidateContext& context) const;
  const CoverageOracleConfig& config() const { return config_; }
  std::string fingerprint() const { return fingerprint_; }

 private:
  CoverageOracleConfig config_;
  std::string fingerprint_;
};

double oracle_score(const CandidateContext& context,
                    const CoverageOracle& oracle);

// Scores every task with the context-level oracle value.
class OracleEvaluator : public Evaluator {
 public:
  explicit OracleEvaluator(CoverageOracle oracle);
  std::string id() const override;
  EvalOutcome evaluate(const CandidateContext& context, const UnitPool& pool,
                       const TaskSet& tasks) override;

 private:
  CoverageOracle oracle_;
};

// Prompts a chat backend with the assembled context plus each task input
// and grades the response. Transport failures score 0 and are flagged; if
// every task fails on transport, the whole evaluation throws BackendError.
class ChatEvaluator : public Evaluator {
 public:
  struct Options {
    AssemblyPolicy policy = AssemblyPolicy::InOrder;
    std::uint64_t shuffle_seed = 0;
    int rollouts_per_task = 1;
    std::string system_prompt;
  };

  explicit ChatEvaluator(ChatBackend& backend);
  ChatEvaluator(ChatBackend& backend, Options options);
  std::string id() const override;
  EvalOutcome evaluate(const CandidateContext& context, const UnitPool& pool,
                       const TaskSet& tasks) override;

  // Optional transcript hook, called per exchange with the task id.
  void set_transcript_sink(
      std::function<void(const std::string&, const ChatExchange&)> sink);

 private:
  ChatBackend& backend_;
  Options options_;
  std::function<void(const std::string&, const ChatExchange&)> sink_;
  std::mutex sink_mutex_;
};

// Single-task rollout: assembled context + task input, graded per spec.
double llm_task_score(const CandidateContext& context, const UnitPool& pool,
                      const TaskInstance& task, ChatBackend& backend,
                      const ChatEvaluator::Options& options =
                          ChatEvaluator::Options());

// Append-only store of evaluation outcomes keyed by
// (context fingerprint, task-set fingerprint, evaluator id). Entries are
// immutable once written; concurrent use is supported.
class FitnessCache {
 public:
  struct Key {
    std::string context_fp;
    std::string taskset_fp;
    std::string evaluator_id;
    std::string str() const {
      return context_fp + "|" + taskset_fp + "|" + evaluator_id;
    }
  };

  FitnessCache() = default;  // in-memory only
  static std::unique_ptr<FitnessCache> open(const std::filesystem::path& file);

  std::optional<EvalOutcome> get(const Key& key);
  void put(const Key& key, const EvalOutcome& outcome);

  std::size_t size() const;
  std::size_t hits() const { return hits_; }
  std::size_t lookups() const { return lookups_; }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, EvalOutcome> entries_;
  std::optional<std::filesystem::path> file_;
  std::size_t hits_ = 0;
  std::size_t lookups_ = 0;
};

// Cache-aware evaluation: on a hit the evaluator is never called; on a miss
// the outcome is written back. `policy_id` must match the fingerprint
// policy the run uses.
EvalOutcome evaluate_context(const CandidateContext& context,
                             const UnitPool& pool, const TaskSet& tasks,
                             Evaluator& evaluator, FitnessCache* cache,
                             std::string_view policy_id = "in_order");

}  // namespace ctxevo
