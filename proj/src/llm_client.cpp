#include "ctxevo/llm_client.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "ctxevo/errors.hpp"
#include "ctxevo/hash.hpp"
#include "ctxevo/rng.hpp"

namespace ctxevo {

void ModelEndpointConfig::validate() const {
  if (base_url.empty()) throw UsageError("endpoint: base_url is required");
  if (max_retries < 0) throw UsageError("endpoint: max_retries must be >= 0");
  if (concurrency_cap < 1) {
    throw UsageError("endpoint: concurrency_cap must be >= 1");
  }
}

void to_json(nlohmann::json& j, const ModelEndpointConfig& c) {
  j = nlohmann::json{{"base_url", c.base_url},
                     {"model", c.model},
                     {"api_key_env", c.api_key_env},
                     {"timeout_ms", c.timeout_ms},
                     {"max_retries", c.max_retries},
                     {"backoff_base_ms", c.backoff_base_ms},
                     {"concurrency_cap", c.concurrency_cap},
                     {"max_output_tokens", c.max_output_tokens},
                     {"temperature", c.temperature}};
}

void from_json(const nlohmann::json& j, ModelEndpointConfig& c) {
  c = ModelEndpointConfig{};
  j.at("base_url").get_to(c.base_url);
  j.at("model").get_to(c.model);
  if (j.contains("api_key_env")) j.at("api_key_env").get_to(c.api_key_env);
  if (j.contains("timeout_ms")) j.at("timeout_ms").get_to(c.timeout_ms);
  if (j.contains("max_retries")) j.at("max_retries").get_to(c.max_retries);
  if (j.contains("backoff_base_ms")) {
    j.at("backoff_base_ms").get_to(c.backoff_base_ms);
  }
  if (j.contains("concurrency_cap")) {
    j.at("concurrency_cap").get_to(c.concurrency_cap);
  }
  if (j.contains("max_output_tokens")) {
    j.at("max_output_tokens").get_to(c.max_output_tokens);
  }
  if (j.contains("temperature")) j.at("temperature").get_to(c.temperature);
}

void to_json(nlohmann::json& j, const ChatMessage& m) {
  j = nlohmann::json{{"role", m.role}, {"content", m.content}};
}

void from_json(const nlohmann::json& j, ChatMessage& m) {
  j.at("role").get_to(m.role);
  j.at("content").get_to(m.content);
}

void to_json(nlohmann::json& j, const ChatExchange& e) {
  j = nlohmann::json{{"request", e.request},
                     {"response", e.response_text},
                     {"prompt_tokens", e.prompt_tokens},
                     {"completion_tokens", e.completion_tokens},
                     {"attempts", e.attempts},
                     {"latency_ms", e.latency_ms}};
}

// Keeps the number of in-flight requests at or below a fixed cap.
class RequestLimiter {
 public:
  explicit RequestLimiter(int cap) : cap_(cap) {}

  void acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return in_flight_ < cap_; });
    ++in_flight_;
  }

  void release() {
    {
      std::lock_guard lock(mutex_);
      --in_flight_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  int cap_;
  int in_flight_ = 0;
};

namespace {

struct LimiterGuard {
  RequestLimiter& limiter;
  explicit LimiterGuard(RequestLimiter& l) : limiter(l) { limiter.acquire(); }
  ~LimiterGuard() { limiter.release(); }
};

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix, no trailing slash
};

ParsedUrl parse_base_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw UsageError("endpoint: base_url must include a scheme: " + base_url);
  }
  const auto path_start = base_url.find('/', scheme_end + 3);
  ParsedUrl out;
  if (path_start == std::string::npos) {
    out.origin = base_url;
  } else {
    out.origin = base_url.substr(0, path_start);
    out.prefix = base_url.substr(path_start);
  }
  while (!out.prefix.empty() && out.prefix.back() == '/') {
    out.prefix.pop_back();
  }
  return out;
}

bool retryable_status(int status) {
  return status == 408 || status == 429 || status == 500 || status == 502 ||
         status == 503 || status == 504;
}

int backoff_with_jitter_ms(int base_ms, int attempt) {
  // Jitter only affects timing, never results, so a non-deterministic
  // thread-local source is fine here.
  thread_local Rng jitter(std::random_device{}());
  const int exp = base_ms * (1 << std::min(attempt, 10));
  return exp + int(jitter.below(std::uint64_t(std::max(base_ms, 1))));
}

std::string bearer_token(const std::string& env_name) {
  if (env_name.empty()) return {};
  const char* value = std::getenv(env_name.c_str());
  return value ? std::string(value) : std::string();
}

httplib::Client make_client(const ParsedUrl& url,
                            const ModelEndpointConfig& config) {
  httplib::Client client(url.origin);
  client.set_connection_timeout(0, config.timeout_ms * 1000LL);
  client.set_read_timeout(config.timeout_ms / 1000,
                          (config.timeout_ms % 1000) * 1000);
  client.set_write_timeout(config.timeout_ms / 1000,
                           (config.timeout_ms % 1000) * 1000);
  return client;
}

// POST with retry/backoff shared by chat and embeddings.
nlohmann::json post_json(const ModelEndpointConfig& config,
                         RequestLimiter& limiter, const std::string& path,
                         const nlohmann::json& body, int* attempts_out) {
  const ParsedUrl url = parse_base_url(config.base_url);
  const std::string payload = body.dump();
  const std::string token = bearer_token(config.api_key_env);

  int last_status = 0;
  std::string last_error;
  for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(
          backoff_with_jitter_ms(config.backoff_base_ms, attempt - 1)));
    }
    httplib::Result res;
    {
      LimiterGuard guard(limiter);
      auto client = make_client(url, config);
      httplib::Headers headers;
      if (!token.empty()) {
        headers.emplace("Authorization", "Bearer " + token);
      }
      res = client.Post(url.prefix + path, headers, payload,
                        "application/json");
    }
    if (attempts_out) *attempts_out = attempt + 1;

    if (!res) {
      last_status = 0;
      last_error = "transport failure: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 200) {
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("backend returned malformed JSON: ") +
                               e.what(),
                           200);
      }
    }
    last_status = res->status;
    last_error = "status " + std::to_string(res->status);
    if (!retryable_status(res->status)) {
      throw BackendError("backend request failed (" + last_error + ")",
                         res->status);
    }
  }
  throw BackendError("backend request failed after " +
                         std::to_string(config.max_retries + 1) +
                         " attempts (" + last_error + ")",
                     last_status);
}

std::string concatenated_request_text(const std::vector<ChatMessage>& msgs) {
  std::string out;
  for (const auto& m : msgs) {
    out += m.content;
    out += '\n';
  }
  return out;
}

}  // namespace

HttpChatBackend::HttpChatBackend(ModelEndpointConfig config)
    : config_(std::move(config)),
      limiter_(std::make_shared<RequestLimiter>(config_.concurrency_cap)) {
  config_.validate();
}

std::string HttpChatBackend::id() const {
  return "chat:" + config_.model + "@" + config_.base_url;
}

ChatExchange HttpChatBackend::complete(
    const std::vector<ChatMessage>& messages) {
  nlohmann::json body{{"model", config_.model},
                      {"messages", messages},
                      {"temperature", config_.temperature},
                      {"max_tokens", config_.max_output_tokens}};

  ChatExchange exchange;
  exchange.request = messages;
  const auto start = std::chrono::steady_clock::now();
  const nlohmann::json reply =
      post_json(config_, *limiter_, "/chat/completions", body,
                &exchange.attempts);
  exchange.latency_ms =
      std::chrono::duration<double, std::milli>(
          std::chrono::steady_clock::now() - start)
          .count();

  try {
    exchange.response_text =
        reply.at("choices").at(0).at("message").at("content")
            .get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw BackendError("backend reply missing choices[0].message.content",
                       200);
  }
  if (reply.contains("usage")) {
    const auto& usage = reply["usage"];
    exchange.prompt_tokens = usage.value("prompt_tokens", 0);
    exchange.completion_tokens = usage.value("completion_tokens", 0);
  }
  return exchange;
}

ChatExchange complete_chat(const ModelEndpointConfig& config,
                           const std::vector<ChatMessage>& messages) {
  return HttpChatBackend(config).complete(messages);
}

StubScript StubScript::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot open stub script: " + file.string());
  nlohmann::json j;
  in >> j;
  return j.get<StubScript>();
}

void to_json(nlohmann::json& j, const StubScript& s) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : s.entries) {
    entries.push_back({{"require_substrings", e.require_substrings},
                       {"response", e.response}});
  }
  j = nlohmann::json{{"entries", entries},
                     {"default_response", s.default_response}};
}

void from_json(const nlohmann::json& j, StubScript& s) {
  s = StubScript{};
  if (j.contains("entries")) {
    for (const auto& e : j.at("entries")) {
      StubScript::Entry entry;
      if (e.contains("require_substrings")) {
        e.at("require_substrings").get_to(entry.require_substrings);
      }
      entry.response = e.value("response", "");
      s.entries.push_back(std::move(entry));
    }
  }
  s.default_response = j.value("default_response", "");
}

StubChatBackend::StubChatBackend(StubScript script)
    : script_(std::move(script)) {
  script_fingerprint_ =
      sha256_hex(nlohmann::json(script_).dump(), 8);
}

std::string StubChatBackend::id() const {
  return "stub:" + script_fingerprint_;
}

ChatExchange StubChatBackend::complete(
    const std::vector<ChatMessage>& messages) {
  calls_.fetch_add(1);
  const std::string request_text = concatenated_request_text(messages);

  ChatExchange exchange;
  exchange.request = messages;
  exchange.attempts = 1;
  exchange.response_text = script_.default_response;
  for (const auto& entry : script_.entries) {
    bool all = true;
    for (const auto& needle : entry.require_substrings) {
      if (request_text.find(needle) == std::string::npos) {
        all = false;
        break;
      }
    }
    if (all) {
      exchange.response_text = entry.response;
      break;
    }
  }
  return exchange;
}

HttpEmbeddingBackend::HttpEmbeddingBackend(ModelEndpointConfig config,
                                           std::size_t batch_size)
    : config_(std::move(config)),
      batch_size_(batch_size == 0 ? 1 : batch_size),
      limiter_(std::make_shared<RequestLimiter>(config_.concurrency_cap)) {
  config_.validate();
}

std::string HttpEmbeddingBackend::id() const {
  return "embed:" + config_.model + "@" + config_.base_url;
}

std::vector<std::vector<double>> HttpEmbeddingBackend::embed(
    const std::vector<std::string>& texts) {
  if (texts.empty()) throw UsageError("embed: texts must be nonempty");

  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (std::size_t offset = 0; offset < texts.size(); offset += batch_size_) {
    const std::size_t count = std::min(batch_size_, texts.size() - offset);
    nlohmann::json input = nlohmann::json::array();
    for (std::size_t i = 0; i < count; ++i) input.push_back(texts[offset + i]);

    requests_.fetch_add(1);
    const nlohmann::json reply =
        post_json(config_, *limiter_, "/embeddings",
                  {{"model", config_.model}, {"input", input}}, nullptr);
    try {
      const auto& data = reply.at("data");
      if (data.size() != count) {
        throw BackendError("embedding batch size mismatch");
      }
      for (const auto& item : data) {
        out.push_back(item.at("embedding").get<std::vector<double>>());
      }
    } catch (const nlohmann::json::exception&) {
      throw BackendError("backend reply missing data[].embedding", 200);
    }
  }
  for (const auto& v : out) {
    if (v.size() != out.front().size()) {
      throw BackendError("embedding dimensions are not uniform");
    }
  }
  return out;
}

std::string HashEmbeddingBackend::id() const {
  return "hash-embed:" + std::to_string(dim_);
}

std::vector<std::vector<double>> HashEmbeddingBackend::embed(
    const std::vector<std::string>& texts) {
  if (texts.empty()) throw UsageError("embed: texts must be nonempty");
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    std::vector<double> v;
    v.reserve(dim_);
    std::size_t counter = 0;
    while (v.size() < dim_) {
      const auto digest = sha256(text + "#" + std::to_string(counter++));
      for (std::size_t i = 0; i + 1 < digest.size() && v.size() < dim_;
           i += 2) {
        const int word = (digest[i] << 8) | digest[i + 1];
        v.push_back(double(word) / 32768.0 - 1.0);
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

CachedEmbeddingBackend::CachedEmbeddingBackend(EmbeddingBackend& inner)
    : inner_(inner) {}

CachedEmbeddingBackend::CachedEmbeddingBackend(
    EmbeddingBackend& inner, const std::filesystem::path& cache_file)
    : inner_(inner), file_(cache_file) {
  std::ifstream in(cache_file);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      entries_[j.at("key").get<std::string>()] =
          j.at("vector").get<std::vector<double>>();
    } catch (const nlohmann::json::exception&) {
      break;  // tolerate a torn trailing line
    }
  }
}

std::string CachedEmbeddingBackend::id() const { return inner_.id(); }

std::vector<std::vector<double>> CachedEmbeddingBackend::embed(
    const std::vector<std::string>& texts) {
  if (texts.empty()) throw UsageError("embed: texts must be nonempty");

  std::vector<std::vector<double>> out(texts.size());
  std::vector<std::size_t> miss_positions;
  std::vector<std::string> miss_texts;
  {
    std::lock_guard lock(mutex_);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const std::string key = inner_.id() + "|" + sha256_hex(texts[i], 16);
      auto it = entries_.find(key);
      if (it != entries_.end()) {
        out[i] = it->second;
      } else {
        miss_positions.push_back(i);
        miss_texts.push_back(texts[i]);
      }
    }
  }
  if (!miss_texts.empty()) {
    const auto fetched = inner_.embed(miss_texts);
    std::lock_guard lock(mutex_);
    std::ofstream sink;
    if (file_) sink.open(*file_, std::ios::app);
    for (std::size_t i = 0; i < miss_positions.size(); ++i) {
      const std::string key =
          inner_.id() + "|" + sha256_hex(miss_texts[i], 16);
      entries_[key] = fetched[i];
      out[miss_positions[i]] = fetched[i];
      if (sink) {
        sink << nlohmann::json{{"key", key}, {"vector", fetched[i]}}.dump()
             << '\n';
      }
    }
    if (sink) sink.flush();
  }
  return out;
}

std::vector<std::vector<double>> embed_texts(
    const ModelEndpointConfig& config, const std::vector<std::string>& texts) {
  return HttpEmbeddingBackend(config).embed(texts);
}

}  // namespace ctxevo
