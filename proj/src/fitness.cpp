#include "ctxevo/fitness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "ctxevo/errors.hpp"
#include "ctxevo/hash.hpp"

namespace ctxevo {

namespace {

std::string grader_type_label(GraderSpec::Type type) {
  switch (type) {
    case GraderSpec::Type::Exact:
      return "exact";
    case GraderSpec::Type::Contains:
      return "contains";
    case GraderSpec::Type::Checker:
      return "checker";
  }
  return "exact";
}

GraderSpec::Type grader_type_from_label(const std::string& label) {
  if (label == "exact") return GraderSpec::Type::Exact;
  if (label == "contains") return GraderSpec::Type::Contains;
  if (label == "checker") return GraderSpec::Type::Checker;
  throw UsageError("unknown grader type: " + label);
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double clamp01(double v) { return std::max(0.0, std::min(1.0, v)); }

double run_checker(const std::string& command, const std::string& task_id,
                   const std::string& task_input, const std::string& response,
                   std::string* error) {
  static std::atomic<unsigned> counter{0};
  const auto dir = std::filesystem::temp_directory_path();
  const std::string stem =
      "ctxevo-check-" + std::to_string(unsigned(::getpid())) + "-" +
      std::to_string(counter.fetch_add(1));
  const auto in_file = dir / (stem + ".in");
  const auto out_file = dir / (stem + ".out");

  {
    std::ofstream out(in_file);
    out << nlohmann::json{{"id", task_id},
                          {"input", task_input},
                          {"response", response}}
               .dump()
        << '\n';
  }

  const std::string shell_cmd =
      command + " < " + in_file.string() + " > " + out_file.string();
  const int rc = std::system(shell_cmd.c_str());

  double score = 0.0;
  bool ok = false;
  if (rc == 0) {
    std::ifstream in(out_file);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    try {
      score = std::stod(trim(text));
      ok = true;
    } catch (const std::exception&) {
      ok = false;
    }
  }
  std::error_code ec;
  std::filesystem::remove(in_file, ec);
  std::filesystem::remove(out_file, ec);

  if (!ok) {
    if (error) {
      *error = "checker failed (exit " + std::to_string(rc) + "): " + command;
    }
    return 0.0;
  }
  return clamp01(score);
}

}  // namespace

void to_json(nlohmann::json& j, const GraderSpec& g) {
  j = nlohmann::json{{"type", grader_type_label(g.type)},
                     {"payload", g.payload}};
}

void from_json(const nlohmann::json& j, GraderSpec& g) {
  g = GraderSpec{};
  g.type = grader_type_from_label(j.at("type").get<std::string>());
  if (j.contains("payload")) j.at("payload").get_to(g.payload);
}

void to_json(nlohmann::json& j, const TaskInstance& t) {
  j = nlohmann::json{{"id", t.id}, {"input", t.input}, {"grader", t.grader}};
}

void from_json(const nlohmann::json& j, TaskInstance& t) {
  t = TaskInstance{};
  j.at("id").get_to(t.id);
  j.at("input").get_to(t.input);
  j.at("grader").get_to(t.grader);
}

TaskSet TaskSet::from_tasks(std::vector<TaskInstance> tasks) {
  if (tasks.empty()) {
    throw UsageError("task set must be nonempty");
  }
  std::string material;
  std::vector<std::string> seen;
  for (const auto& task : tasks) {
    if (std::find(seen.begin(), seen.end(), task.id) != seen.end()) {
      throw UsageError("duplicate task id: " + task.id);
    }
    seen.push_back(task.id);
    material += nlohmann::json(task).dump();
    material += '\n';
  }

  TaskSet out;
  out.tasks_ = std::move(tasks);
  out.fingerprint_ = sha256_hex(material, 16);
  return out;
}

TaskSet TaskSet::load_jsonl(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot open task file: " + file.string());
  std::vector<TaskInstance> tasks;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      tasks.push_back(nlohmann::json::parse(line).get<TaskInstance>());
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("bad task at line " + std::to_string(line_no) + ": " +
                       e.what());
    }
  }
  return from_tasks(std::move(tasks));
}

void TaskSet::save_jsonl(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw RunError("cannot write task file: " + file.string());
  for (const auto& task : tasks_) {
    out << nlohmann::json(task).dump() << '\n';
  }
}

double grade_response(const std::string& response, const GraderSpec& grader,
                      const std::string& task_id,
                      const std::string& task_input, std::string* error) {
  switch (grader.type) {
    case GraderSpec::Type::Exact:
      return trim(response) == trim(grader.payload) ? 1.0 : 0.0;
    case GraderSpec::Type::Contains:
      return response.find(grader.payload) != std::string::npos ? 1.0 : 0.0;
    case GraderSpec::Type::Checker:
      return run_checker(grader.payload, task_id, task_input, response, error);
  }
  return 0.0;
}

void to_json(nlohmann::json& j, const EvalOutcome& o) {
  j = nlohmann::json{{"per_task", o.per_task},
                     {"aggregate", o.aggregate},
                     {"failed_task_ids", o.failed_task_ids}};
}

void from_json(const nlohmann::json& j, EvalOutcome& o) {
  o = EvalOutcome{};
  j.at("per_task").get_to(o.per_task);
  j.at("aggregate").get_to(o.aggregate);
  if (j.contains("failed_task_ids")) {
    j.at("failed_task_ids").get_to(o.failed_task_ids);
  }
}

void to_json(nlohmann::json& j, const CoverageOracleConfig& c) {
  nlohmann::json synergies = nlohmann::json::array();
  for (const auto& s : c.synergies) {
    synergies.push_back({{"a", s.a}, {"b", s.b}, {"bonus", s.bonus}});
  }
  j = nlohmann::json{{"target_ids", c.target_ids},
                     {"distraction_penalty", c.distraction_penalty},
                     {"synergies", synergies}};
}

void from_json(const nlohmann::json& j, CoverageOracleConfig& c) {
  c = CoverageOracleConfig{};
  j.at("target_ids").get_to(c.target_ids);
  if (j.contains("distraction_penalty")) {
    j.at("distraction_penalty").get_to(c.distraction_penalty);
  }
  if (j.contains("synergies")) {
    for (const auto& s : j.at("synergies")) {
      c.synergies.push_back({s.at("a").get<std::string>(),
                             s.at("b").get<std::string>(),
                             s.at("bonus").get<double>()});
    }
  }
}

CoverageOracle::CoverageOracle(CoverageOracleConfig config)
    : config_(std::move(config)) {
  if (config_.target_ids.empty()) {
    throw UsageError("coverage oracle requires a nonempty target set");
  }
  if (config_.distraction_penalty < 0) {
    throw UsageError("coverage oracle penalty must be >= 0");
  }
  fingerprint_ = sha256_hex(nlohmann::json(config_).dump(), 8);
}

CoverageOracle CoverageOracle::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot open oracle file: " + file.string());
  nlohmann::json j;
  in >> j;
  return CoverageOracle(j.get<CoverageOracleConfig>());
}

double CoverageOracle::score(const CandidateContext& context) const {
  std::size_t covered = 0;
  for (const auto& target : config_.target_ids) {
    if (context.contains(target)) ++covered;
  }
  const std::size_t distractors = context.size() - covered;

  double value = double(covered) / double(config_.target_ids.size());
  value -= config_.distraction_penalty * double(distractors) /
           double(context.max_units());
  for (const auto& synergy : config_.synergies) {
    if (context.contains(synergy.a) && context.contains(synergy.b)) {
      value += synergy.bonus;
    }
  }
  return clamp01(value);
}

double oracle_score(const CandidateContext& context,
                    const CoverageOracle& oracle) {
  return oracle.score(context);
}

OracleEvaluator::OracleEvaluator(CoverageOracle oracle)
    : oracle_(std::move(oracle)) {}

std::string OracleEvaluator::id() const {
  return "oracle:" + oracle_.fingerprint();
}

EvalOutcome OracleEvaluator::evaluate(const CandidateContext& context,
                                      const UnitPool& pool,
                                      const TaskSet& tasks) {
  context.validate_against(pool);
  const double s = oracle_.score(context);
  EvalOutcome outcome;
  outcome.per_task.assign(std::max<std::size_t>(tasks.size(), 1), s);
  outcome.aggregate = s;
  return outcome;
}

ChatEvaluator::ChatEvaluator(ChatBackend& backend)
    : ChatEvaluator(backend, Options()) {}

ChatEvaluator::ChatEvaluator(ChatBackend& backend, Options options)
    : backend_(backend), options_(std::move(options)) {
  if (options_.rollouts_per_task < 1) {
    throw UsageError("rollouts_per_task must be >= 1");
  }
}

std::string ChatEvaluator::id() const {
  return "chat-eval:" + backend_.id() + ":r" +
         std::to_string(options_.rollouts_per_task);
}

void ChatEvaluator::set_transcript_sink(
    std::function<void(const std::string&, const ChatExchange&)> sink) {
  sink_ = std::move(sink);
}

EvalOutcome ChatEvaluator::evaluate(const CandidateContext& context,
                                    const UnitPool& pool,
                                    const TaskSet& tasks) {
  const std::string prompt = assemble_prompt(context, pool, options_.policy,
                                             options_.shuffle_seed);

  EvalOutcome outcome;
  outcome.per_task.reserve(tasks.size());
  std::size_t transport_failures = 0;
  std::string first_error;

  for (const auto& task : tasks.tasks()) {
    double total = 0.0;
    bool failed = false;
    for (int rollout = 0; rollout < options_.rollouts_per_task; ++rollout) {
      std::vector<ChatMessage> messages;
      if (!options_.system_prompt.empty()) {
        messages.push_back({"system", options_.system_prompt});
      }
      messages.push_back({"user", prompt + "\n" + task.input});

      try {
        const ChatExchange exchange = backend_.complete(messages);
        if (sink_) {
          std::lock_guard lock(sink_mutex_);
          sink_(task.id, exchange);
        }
        std::string grade_error;
        const double s = grade_response(exchange.response_text, task.grader,
                                        task.id, task.input, &grade_error);
        if (!grade_error.empty()) failed = true;
        total += s;
      } catch (const BackendError& e) {
        failed = true;
        ++transport_failures;
        if (first_error.empty()) first_error = e.what();
      }
    }
    outcome.per_task.push_back(total / options_.rollouts_per_task);
    if (failed) outcome.failed_task_ids.push_back(task.id);
  }

  if (!tasks.tasks().empty() && transport_failures > 0 &&
      outcome.failed_task_ids.size() == tasks.size() &&
      transport_failures >=
          std::size_t(options_.rollouts_per_task) * tasks.size()) {
    throw BackendError("evaluation failed on every task: " + first_error);
  }

  double sum = 0.0;
  for (double s : outcome.per_task) sum += s;
  outcome.aggregate = outcome.per_task.empty()
                          ? 0.0
                          : sum / double(outcome.per_task.size());
  return outcome;
}

double llm_task_score(const CandidateContext& context, const UnitPool& pool,
                      const TaskInstance& task, ChatBackend& backend,
                      const ChatEvaluator::Options& options) {
  ChatEvaluator evaluator(backend, options);
  const TaskSet single = TaskSet::from_tasks({task});
  return evaluator.evaluate(context, pool, single).per_task.at(0);
}

std::unique_ptr<FitnessCache> FitnessCache::open(
    const std::filesystem::path& file) {
  auto cache = std::make_unique<FitnessCache>();
  cache->file_ = file;

  std::ifstream in(file);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      cache->entries_[j.at("key").get<std::string>()] =
          j.at("outcome").get<EvalOutcome>();
    } catch (const nlohmann::json::exception&) {
      break;  // tolerate a torn trailing line
    }
  }
  return cache;
}

std::optional<EvalOutcome> FitnessCache::get(const Key& key) {
  std::lock_guard lock(mutex_);
  ++lookups_;
  const auto it = entries_.find(key.str());
  if (it == entries_.end()) return std::nullopt;
  ++hits_;
  EvalOutcome outcome = it->second;
  outcome.cache_hit = true;
  return outcome;
}

void FitnessCache::put(const Key& key, const EvalOutcome& outcome) {
  std::lock_guard lock(mutex_);
  // Values are referentially transparent per evaluator id, so a repeated
  // write of the same key is a no-op by construction.
  if (!entries_.emplace(key.str(), outcome).second) return;
  if (file_) {
    std::ofstream sink(*file_, std::ios::app);
    sink << nlohmann::json{{"key", key.str()}, {"outcome", outcome}}.dump()
         << '\n';
    sink.flush();
  }
}

std::size_t FitnessCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

EvalOutcome evaluate_context(const CandidateContext& context,
                             const UnitPool& pool, const TaskSet& tasks,
                             Evaluator& evaluator, FitnessCache* cache,
                             std::string_view policy_id) {
  const FitnessCache::Key key{fingerprint(context, policy_id),
                              tasks.fingerprint(), evaluator.id()};
  if (cache) {
    if (auto hit = cache->get(key)) return *hit;
  }
  EvalOutcome outcome = evaluator.evaluate(context, pool, tasks);
  if (cache) cache->put(key, outcome);
  return outcome;
}

}  // namespace ctxevo
