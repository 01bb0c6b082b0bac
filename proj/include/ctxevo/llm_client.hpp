#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace ctxevo {

// Transport settings for one chat-completions style endpoint. The auth
// token is resolved from the named environment variable at call time and
// never stored, so configs are safe to serialize into run manifests.
struct ModelEndpointConfig {
  std::string base_url = "http://127.0.0.1:8080/v1";
  std::string model = "default";
  std::string api_key_env = "CTXEVO_API_KEY";
  int timeout_ms = 60000;
  int max_retries = 3;
  int backoff_base_ms = 250;
  int concurrency_cap = 4;
  int max_output_tokens = 1024;
  double temperature = 0.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelEndpointConfig& c);
void from_json(const nlohmann::json& j, ModelEndpointConfig& c);

struct ChatMessage {
  std::string role;
  std::string content;
};

void to_json(nlohmann::json& j, const ChatMessage& m);
void from_json(const nlohmann::json& j, ChatMessage& m);

// One request/response round trip, recorded verbatim when transcript
// logging is on. Carries no credentials.
struct ChatExchange {
  std::vector<ChatMessage> request;
  std::string response_text;
  int prompt_tokens = 0;
  int completion_tokens = 0;
  int attempts = 0;
  double latency_ms = 0.0;
};

void to_json(nlohmann::json& j, const ChatExchange& e);

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string id() const = 0;
  // Must be safe for concurrent calls. Throws BackendError on failure.
  virtual ChatExchange complete(const std::vector<ChatMessage>& messages) = 0;
};

// Chat client speaking the common HTTP JSON chat-completions wire format,
// so any compatible gateway (hosted or local) works. Retries transient and
// ratelimit statuses with exponential backoff plus jitter; a shared limiter
// keeps in-flight requests at or below the configured cap.
class HttpChatBackend : public ChatBackend {
 public:
  explicit HttpChatBackend(ModelEndpointConfig config);
  std::string id() const override;
  ChatExchange complete(const std::vector<ChatMessage>& messages) override;
  const ModelEndpointConfig& config() const { return config_; }

 private:
  ModelEndpointConfig config_;
  std::shared_ptr<class RequestLimiter> limiter_;
};

// One-shot helper over a transient HttpChatBackend.
ChatExchange complete_chat(const ModelEndpointConfig& config,
                           const std::vector<ChatMessage>& messages);

// Deterministic offline backend: the first script entry whose required
// substrings all appear in the concatenated request text supplies the
// response; otherwise the default response is returned.
struct StubScript {
  struct Entry {
    std::vector<std::string> require_substrings;
    std::string response;
  };
  std::vector<Entry> entries;
  std::string default_response;

  static StubScript load(const std::filesystem::path& file);
};

void to_json(nlohmann::json& j, const StubScript& s);
void from_json(const nlohmann::json& j, StubScript& s);

class StubChatBackend : public ChatBackend {
 public:
  explicit StubChatBackend(StubScript script);
  std::string id() const override;
  ChatExchange complete(const std::vector<ChatMessage>& messages) override;
  int calls() const { return calls_.load(); }

 private:
  StubScript script_;
  std::string script_fingerprint_;
  std::atomic<int> calls_{0};
};

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::string id() const = 0;
  // One vector per input text, uniform dimension. Throws BackendError.
  virtual std::vector<std::vector<double>> embed(
      const std::vector<std::string>& texts) = 0;
};

// Embeddings over the HTTP JSON embeddings wire format; requests are
// batched and share the backend's concurrency limiter.
class HttpEmbeddingBackend : public EmbeddingBackend {
 public:
  explicit HttpEmbeddingBackend(ModelEndpointConfig config,
                                std::size_t batch_size = 64);
  std::string id() const override;
  std::vector<std::vector<double>> embed(
      const std::vector<std::string>& texts) override;
  int requests() const { return requests_.load(); }

 private:
  ModelEndpointConfig config_;
  std::size_t batch_size_;
  std::shared_ptr<class RequestLimiter> limiter_;
  std::atomic<int> requests_{0};
};

// Deterministic offline embeddings derived from the text hash. Useful for
// exercising dense/hybrid retrieval without a network backend.
class HashEmbeddingBackend : public EmbeddingBackend {
 public:
  explicit HashEmbeddingBackend(std::size_t dim = 16) : dim_(dim) {}
  std::string id() const override;
  std::vector<std::vector<double>> embed(
      const std::vector<std::string>& texts) override;

 private:
  std::size_t dim_;
};

// Cache keyed by (backend id, text hash); only misses reach the inner
// backend. Optionally persists entries as JSONL.
class CachedEmbeddingBackend : public EmbeddingBackend {
 public:
  explicit CachedEmbeddingBackend(EmbeddingBackend& inner);
  CachedEmbeddingBackend(EmbeddingBackend& inner,
                         const std::filesystem::path& cache_file);
  std::string id() const override;
  std::vector<std::vector<double>> embed(
      const std::vector<std::string>& texts) override;

 private:
  EmbeddingBackend& inner_;
  std::mutex mutex_;
  std::map<std::string, std::vector<double>> entries_;
  std::optional<std::filesystem::path> file_;
};

// One-shot helper matching embed_texts(config, texts).
std::vector<std::vector<double>> embed_texts(
    const ModelEndpointConfig& config, const std::vector<std::string>& texts);

}  // namespace ctxevo
