#include "cardio/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>
#include <fmt/format.h>
#include <openssl/sha.h>
#include <spdlog/spdlog.h>

#include "cardio/mirage.hpp"

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

namespace cardio::gateway {

using nlohmann::json;

std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::MockGrounded: return "mock-grounded";
    case BackendKind::MockMirage: return "mock-mirage";
    case BackendKind::MockScripted: return "mock-scripted";
    case BackendKind::Remote: return "remote";
  }
  return "remote";
}

BackendKind backend_kind_from_string(std::string_view text) {
  for (auto k : {BackendKind::MockGrounded, BackendKind::MockMirage, BackendKind::MockScripted, BackendKind::Remote}) {
    if (to_string(k) == text) return k;
  }
  throw std::invalid_argument(fmt::format("unknown backend kind '{}'", text));
}

std::string_view to_string(GatewayError::Category c) {
  switch (c) {
    case GatewayError::Category::Timeout: return "timeout";
    case GatewayError::Category::Transport: return "transport";
    case GatewayError::Category::Protocol: return "protocol";
    case GatewayError::Category::ExhaustedRetries: return "exhausted-retries";
    case GatewayError::Category::BackendRefusal: return "backend-refusal";
  }
  return "transport";
}

namespace {

GatewayError::Category category_from_string(std::string_view text) {
  for (auto c : {GatewayError::Category::Timeout, GatewayError::Category::Transport, GatewayError::Category::Protocol,
                 GatewayError::Category::ExhaustedRetries, GatewayError::Category::BackendRefusal}) {
    if (to_string(c) == text) return c;
  }
  throw std::invalid_argument(fmt::format("unknown failure category '{}'", text));
}

}  // namespace

GatewayError::GatewayError(Category category, std::string detail, int attempt_count)
    : std::runtime_error(fmt::format("gateway {} after {} attempt(s): {}", to_string(category), attempt_count, detail)),
      category_(category),
      detail_(std::move(detail)),
      attempts_(attempt_count) {}

std::string fingerprint(std::string_view question) {
  std::string norm;
  norm.reserve(question.size());
  bool pending_space = false;
  for (unsigned char c : question) {
    if (std::isspace(c)) {
      pending_space = !norm.empty();
      continue;
    }
    if (pending_space) norm.push_back(' ');
    pending_space = false;
    norm.push_back(static_cast<char>(std::tolower(c)));
  }
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(norm.data()), norm.size(), digest);
  std::string hex;
  hex.reserve(2 * SHA256_DIGEST_LENGTH);
  for (unsigned char b : digest) hex += fmt::format("{:02x}", b);
  return hex;
}

// ---- media ----

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  using namespace boost::archive::iterators;
  using It = base64_from_binary<transform_width<std::vector<std::uint8_t>::const_iterator, 6, 8>>;
  std::string out(It(bytes.begin()), It(bytes.end()));
  out.append((3 - bytes.size() % 3) % 3, '=');
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  using namespace boost::archive::iterators;
  std::string trimmed(text);
  trimmed.erase(std::remove_if(trimmed.begin(), trimmed.end(), [](unsigned char c) { return std::isspace(c); }),
                trimmed.end());
  const auto pad = std::count(trimmed.begin(), trimmed.end(), '=');
  std::replace(trimmed.begin(), trimmed.end(), '=', 'A');
  using It = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
  std::vector<std::uint8_t> out;
  try {
    out.assign(It(trimmed.begin()), It(trimmed.end()));
  } catch (const std::exception& e) {
    throw std::invalid_argument(fmt::format("invalid base64: {}", e.what()));
  }
  out.resize(out.size() - std::min<std::size_t>(out.size(), static_cast<std::size_t>(pad)));
  return out;
}

std::vector<std::uint8_t> resolve_media(const MediaRef& ref) {
  std::string_view uri = ref.uri;
  if (uri.rfind("data:", 0) == 0) {
    const auto comma = uri.find(',');
    if (comma == std::string_view::npos || uri.substr(0, comma).find(";base64") == std::string_view::npos) {
      throw GatewayError(GatewayError::Category::Protocol, "unsupported data URI (base64 required)", 0);
    }
    return base64_decode(uri.substr(comma + 1));
  }
  if (uri.rfind("file://", 0) == 0) uri.remove_prefix(7);
  try {
    const auto content = read_file(std::string(uri));
    return {content.begin(), content.end()};
  } catch (const std::exception& e) {
    throw GatewayError(GatewayError::Category::Protocol, fmt::format("media '{}' not resolvable", ref.uri), 0);
  }
}

std::string mime_type_for(const MediaRef& ref) {
  std::string_view uri = ref.uri;
  if (uri.rfind("data:", 0) == 0) {
    const auto end = uri.find_first_of(";,");
    return std::string(uri.substr(5, end - 5));
  }
  auto ends_with = [&](std::string_view suffix) {
    return uri.size() >= suffix.size() && uri.substr(uri.size() - suffix.size()) == suffix;
  };
  if (ends_with(".ppm")) return "image/x-portable-pixmap";
  if (ends_with(".png")) return "image/png";
  if (ends_with(".jpg") || ends_with(".jpeg")) return "image/jpeg";
  if (ends_with(".mp4")) return "video/mp4";
  if (ends_with(".xml")) return "application/xml";
  if (ends_with(".json")) return "application/json";
  return "application/octet-stream";
}

std::string to_data_uri(const MediaRef& ref) {
  if (ref.uri.rfind("data:", 0) == 0) return ref.uri;
  return fmt::format("data:{};base64,{}", mime_type_for(ref), base64_encode(resolve_media(ref)));
}

// ---- mocks ----

MockTable MockTable::from_json(const json& j) {
  MockTable t;
  t.id = j.at("id").get<std::string>();
  t.kind = backend_kind_from_string(j.at("kind").get<std::string>());
  if (t.kind == BackendKind::Remote) throw std::invalid_argument("mock table cannot have kind 'remote'");
  t.modality = j.at("modality").get<Modality>();
  t.latency_ms = j.value("latency_ms", std::uint64_t{0});

  auto read_pair = [&](const json& e, std::string& present, std::string& absent) {
    if (e.contains("text")) {
      present = absent = e["text"].get<std::string>();
    } else {
      present = e.value("present", std::string{});
      absent = e.value("absent", std::string{});
    }
  };

  if (j.contains("default")) {
    read_pair(j["default"], t.default_present, t.default_absent);
  } else if (t.kind == BackendKind::MockGrounded) {
    t.default_present = fmt::format("Assessment of the supplied {} media demonstrates findings specific to this study",
                                    to_string(t.modality));
    t.default_absent = "No image was supplied so this cannot be assessed";
  } else if (t.kind == BackendKind::MockMirage) {
    t.default_present = t.default_absent = "Findings are within normal limits";
  }

  for (const auto& e : j.value("entries", json::array())) {
    MockEntry entry;
    entry.question = e.at("question").get<std::string>();
    entry.subject = e.value("subject", std::string{});
    read_pair(e, entry.present_text, entry.absent_text);
    if (e.contains("fail")) entry.fail = category_from_string(e["fail"].get<std::string>());
    t.entries.push_back(std::move(entry));
  }
  return t;
}

MockTable MockTable::load(const std::string& path) {
  try {
    return from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("mock table '{}': {}", path, e.what()));
  }
}

MockBackend::MockBackend(MockTable table) : table_(std::move(table)) {
  auto check = [&](const std::string& present, const std::string& absent, const std::string& what) {
    if (table_.kind == BackendKind::MockMirage && present != absent) {
      throw std::invalid_argument(fmt::format("mock-mirage table '{}': {} differs between media forms", table_.id, what));
    }
    if (table_.kind == BackendKind::MockGrounded && !(mirage::text_similarity(present, absent) < 0.5)) {
      throw std::invalid_argument(
          fmt::format("mock-grounded table '{}': {} forms are too similar (Jaccard >= 0.5)", table_.id, what));
    }
  };
  if (!table_.default_present.empty() || !table_.default_absent.empty()) {
    check(table_.default_present, table_.default_absent, "default");
  }
  for (std::size_t i = 0; i < table_.entries.size(); ++i) {
    const auto& e = table_.entries[i];
    if (!e.fail) check(e.present_text, e.absent_text, fmt::format("entry '{}'", e.question));
    index_.emplace(fingerprint(e.question), i);
    for (const auto& variant : mirage::rephrase(e.question, e.subject, table_.modality)) {
      index_.emplace(fingerprint(variant), i);
    }
  }
}

const MockEntry* MockBackend::lookup(std::string_view question) const {
  auto it = index_.find(fingerprint(question));
  return it == index_.end() ? nullptr : &table_.entries[it->second];
}

ExpertResponse MockBackend::query(const ExpertQuery& q) {
  const bool present = q.media.has_value();
  std::string text;
  if (const auto* e = lookup(q.question)) {
    if (e->fail) throw GatewayError(*e->fail, fmt::format("scripted failure for '{}'", e->question), 1);
    text = present ? e->present_text : e->absent_text;
  } else if (!table_.default_present.empty() || !table_.default_absent.empty()) {
    text = present ? table_.default_present : table_.default_absent;
  } else {
    throw GatewayError(GatewayError::Category::BackendRefusal,
                       fmt::format("no scripted response in '{}' for '{}'", table_.id, q.question), 1);
  }
  if (table_.latency_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(table_.latency_ms));
  return ExpertResponse{std::move(text), q.modality, q.probe_role, table_.latency_ms, table_.id, 1};
}

std::string MockBackend::complete(std::string_view prompt) {
  return query(ExpertQuery{std::string(prompt), table_.modality, std::nullopt, ProbeRole::ImageAbsent}).text;
}

// ---- remote ----

json build_chat_request(const std::string& model, const ExpertQuery& q) {
  json content = json::array();
  content.push_back({{"type", "text"}, {"text", q.question}});
  if (q.media) {
    for (const auto& ref : *q.media) {
      content.push_back({{"type", "image"}, {"image_url", {{"url", to_data_uri(ref)}}}});
    }
  }
  return json{{"model", model}, {"messages", json::array({json{{"role", "user"}, {"content", content}}})}};
}

json build_text_request(const std::string& model, std::string_view prompt) {
  json content = json::array({json{{"type", "text"}, {"text", std::string(prompt)}}});
  return json{{"model", model}, {"messages", json::array({json{{"role", "user"}, {"content", content}}})}};
}

std::string parse_chat_response(std::string_view body) {
  try {
    const auto j = json::parse(body);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
    if (content.is_array()) {
      std::string text;
      for (const auto& part : content) {
        if (part.value("type", "") == "text") text += part.at("text").get<std::string>();
      }
      return text;
    }
  } catch (const json::exception& e) {
    throw GatewayError(GatewayError::Category::Protocol, fmt::format("malformed response: {}", e.what()), 1);
  }
  throw GatewayError(GatewayError::Category::Protocol, "malformed response: content is neither string nor array", 1);
}

RemoteBackend::RemoteBackend(std::string id, Modality modality, RemoteConfig config, Sleeper sleeper)
    : id_(std::move(id)),
      modality_(modality),
      config_(std::move(config)),
      sleeper_(std::move(sleeper)),
      rng_(config_.jitter_seed) {
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  if (config_.max_retries < 0) throw std::invalid_argument("max_retries must be >= 0");
  const auto scheme_end = config_.base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw std::invalid_argument(fmt::format("base_url '{}' lacks a scheme", config_.base_url));
  }
  const auto path_start = config_.base_url.find('/', scheme_end + 3);
  host_ = config_.base_url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "" : config_.base_url.substr(path_start);
  while (!path_.empty() && path_.back() == '/') path_.pop_back();
}

std::chrono::milliseconds RemoteBackend::backoff_delay(int retry) {
  const double nominal = static_cast<double>(config_.retry.base.count()) * std::pow(config_.retry.factor, retry - 1);
  double u;
  {
    std::lock_guard lock(rng_mutex_);
    u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;  // [0, 1)
  }
  const double scale = 1.0 + config_.retry.jitter * (2.0 * u - 1.0);
  return std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(nominal * scale)));
}

RemoteBackend::PostResult RemoteBackend::post_with_retries(const json& body) {
  const std::string payload = body.dump();
  const std::string endpoint = path_ + "/chat/completions";
  const int max_attempts = config_.max_retries + 1;

  httplib::Headers headers;
  if (!config_.auth_env.empty()) {
    if (const char* token = std::getenv(config_.auth_env.c_str())) {
      headers.emplace("Authorization", fmt::format("Bearer {}", token));
    }
  }

  std::string last_detail;
  GatewayError::Category last_category = GatewayError::Category::Transport;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    if (attempt > 1) sleeper_(backoff_delay(attempt - 1));

    httplib::Client client(host_);
    const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    const auto started = std::chrono::steady_clock::now();
    auto res = client.Post(endpoint, headers, payload, "application/json");
    const auto elapsed = std::chrono::steady_clock::now() - started;

    if (!res) {
      const auto err = res.error();
      const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                             (err == httplib::Error::Read && elapsed >= timeout);
      last_category = timed_out ? GatewayError::Category::Timeout : GatewayError::Category::Transport;
      last_detail = httplib::to_string(err);
      spdlog::debug("backend {}: attempt {} failed: {}", id_, attempt, last_detail);
      continue;
    }
    if (res->status >= 500 || res->status == 429) {
      last_category = GatewayError::Category::Transport;
      last_detail = fmt::format("HTTP {}", res->status);
      spdlog::debug("backend {}: attempt {} got {}", id_, attempt, res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw GatewayError(GatewayError::Category::BackendRefusal, fmt::format("HTTP {}: {}", res->status, res->body),
                         attempt);
    }
    try {
      return {parse_chat_response(res->body), attempt};
    } catch (const GatewayError& e) {
      throw GatewayError(e.category(), e.detail(), attempt);
    }
  }
  throw GatewayError(GatewayError::Category::ExhaustedRetries,
                     fmt::format("last failure ({}): {}", to_string(last_category), last_detail), max_attempts);
}

ExpertResponse RemoteBackend::query(const ExpertQuery& q) {
  const auto started = std::chrono::steady_clock::now();
  auto result = post_with_retries(build_chat_request(config_.model, q));
  const auto latency =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count();
  return ExpertResponse{std::move(result.text), q.modality, q.probe_role, static_cast<std::uint64_t>(latency), id_,
                        result.attempts};
}

std::string RemoteBackend::complete(std::string_view prompt) {
  return post_with_retries(build_text_request(config_.model, prompt)).text;
}

BackendPtr make_backend(const BackendSpec& spec) {
  if (spec.kind == BackendKind::Remote) {
    return std::make_shared<RemoteBackend>(spec.id, spec.modality, spec.remote);
  }
  auto table = MockTable::load(spec.table_path);
  if (table.kind != spec.kind) {
    throw std::invalid_argument(fmt::format("backend '{}': table kind {} does not match configured kind {}", spec.id,
                                            to_string(table.kind), to_string(spec.kind)));
  }
  return std::make_shared<MockBackend>(std::move(table));
}

ExpertResponse query(ExpertBackend& backend, const ExpertQuery& q) {
  if (!q.consistent()) {
    throw std::invalid_argument("query: image-absent probes must carry no media and vice versa");
  }
  auto r = backend.query(q);
  r.probe_role = q.probe_role;
  return r;
}

}  // namespace cardio::gateway
