#pragma once

// Uniform access to modality experts. Mock backends answer from JSON behavior
// tables; the remote backend speaks a chat-completion style JSON protocol over
// HTTP with retry and exponential backoff.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cardio/domain.hpp"

namespace cardio::gateway {

enum class BackendKind { MockGrounded, MockMirage, MockScripted, Remote };

std::string_view to_string(BackendKind k);
BackendKind backend_kind_from_string(std::string_view text);

class GatewayError : public std::runtime_error {
 public:
  enum class Category { Timeout, Transport, Protocol, ExhaustedRetries, BackendRefusal };

  GatewayError(Category category, std::string detail, int attempt_count);

  Category category() const noexcept { return category_; }
  const std::string& detail() const noexcept { return detail_; }
  int attempt_count() const noexcept { return attempts_; }

 private:
  Category category_;
  std::string detail_;
  int attempts_;
};

std::string_view to_string(GatewayError::Category c);

/// Stable hex digest of the case-folded, whitespace-collapsed question.
std::string fingerprint(std::string_view question);

/// Bytes behind a media reference: plain paths, file:// URIs and base64 data: URIs.
std::vector<std::uint8_t> resolve_media(const MediaRef& ref);
std::string mime_type_for(const MediaRef& ref);
std::string to_data_uri(const MediaRef& ref);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

class ExpertBackend {
 public:
  virtual ~ExpertBackend() = default;

  virtual const std::string& id() const = 0;
  virtual BackendKind kind() const = 0;
  /// Answers one probe. The response always carries q.probe_role.
  virtual ExpertResponse query(const ExpertQuery& q) = 0;
  /// Plain text completion, used by the remote decomposer and Likert judge.
  virtual std::string complete(std::string_view prompt) = 0;
};

using BackendPtr = std::shared_ptr<ExpertBackend>;

/// One scripted behavior: a question (with optional subject, so that its
/// three rephrasings also match) mapped to media-present and media-absent texts.
struct MockEntry {
  std::string question;
  std::string subject;
  std::string present_text;
  std::string absent_text;
  std::optional<GatewayError::Category> fail;  // scripted failure for every probe of this question
};

struct MockTable {
  std::string id;
  BackendKind kind = BackendKind::MockScripted;
  Modality modality = Modality::Ecg;
  std::uint64_t latency_ms = 0;  // simulated per-query delay
  std::string default_present;
  std::string default_absent;
  std::vector<MockEntry> entries;

  static MockTable from_json(const nlohmann::json& j);
  static MockTable load(const std::string& path);
};

/// Immutable after construction; safe for concurrent queries.
class MockBackend final : public ExpertBackend {
 public:
  /// Throws std::invalid_argument if the table violates its kind's invariant
  /// (mirage: identical texts; grounded: Jaccard < 0.5 between the forms).
  explicit MockBackend(MockTable table);

  const std::string& id() const override { return table_.id; }
  BackendKind kind() const override { return table_.kind; }
  ExpertResponse query(const ExpertQuery& q) override;
  std::string complete(std::string_view prompt) override;

  const MockTable& table() const { return table_; }

 private:
  const MockEntry* lookup(std::string_view question) const;

  MockTable table_;
  std::unordered_map<std::string, std::size_t> index_;  // fingerprint -> entry
};

struct RetryPolicy {
  std::chrono::milliseconds base{500};
  double factor = 2.0;
  double jitter = 0.2;  // ± fraction of the nominal delay
};

struct RemoteConfig {
  std::string base_url;
  std::string auth_env;  // name of the environment variable holding the bearer token
  std::string model;
  int timeout_ms = 30000;
  int max_retries = 3;
  RetryPolicy retry;
  std::uint64_t jitter_seed = 42;
};

/// Request body for one probe. Image-absent probes carry a text part only.
nlohmann::json build_chat_request(const std::string& model, const ExpertQuery& q);
nlohmann::json build_text_request(const std::string& model, std::string_view prompt);
/// Extracts the assistant text; throws GatewayError(Protocol) on malformed payloads.
std::string parse_chat_response(std::string_view body);

class RemoteBackend final : public ExpertBackend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  RemoteBackend(std::string id, Modality modality, RemoteConfig config, Sleeper sleeper = {});

  const std::string& id() const override { return id_; }
  BackendKind kind() const override { return BackendKind::Remote; }
  ExpertResponse query(const ExpertQuery& q) override;
  std::string complete(std::string_view prompt) override;

  /// Delay before retry number `retry` (1-based), jitter included.
  std::chrono::milliseconds backoff_delay(int retry);

 private:
  struct PostResult {
    std::string text;
    int attempts;
  };
  PostResult post_with_retries(const nlohmann::json& body);

  std::string id_;
  Modality modality_;
  RemoteConfig config_;
  Sleeper sleeper_;
  std::string host_;   // scheme://host[:port]
  std::string path_;   // path prefix, e.g. "/v1"
  std::mutex rng_mutex_;
  std::mt19937_64 rng_;
};

/// Backend description as it appears in configuration files.
struct BackendSpec {
  std::string id;
  BackendKind kind = BackendKind::MockScripted;
  Modality modality = Modality::Ecg;
  std::string table_path;  // mocks
  RemoteConfig remote;     // remote
};

BackendPtr make_backend(const BackendSpec& spec);

/// Validates q against its own invariants, then forwards to the backend.
ExpertResponse query(ExpertBackend& backend, const ExpertQuery& q);

}  // namespace cardio::gateway
