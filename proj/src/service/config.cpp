#include <cstdlib>
#include <filesystem>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "cardio/service.hpp"

namespace cardio::service {

namespace fs = std::filesystem;

std::string interpolate_env(const std::string& text, const EnvLookup& env) {
  std::string out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto open = text.find("${", pos);
    if (open == std::string::npos) {
      out.append(text, pos);
      break;
    }
    out.append(text, pos, open - pos);
    const auto close = text.find('}', open);
    if (close == std::string::npos) throw ConfigError("unterminated ${ in configuration");
    std::string name = text.substr(open + 2, close - open - 2);
    std::optional<std::string> fallback;
    if (const auto dash = name.find(":-"); dash != std::string::npos) {
      fallback = name.substr(dash + 2);
      name = name.substr(0, dash);
    }
    auto value = env(name);
    if (!value) value = fallback;
    if (!value) throw ConfigError(fmt::format("environment variable {} is not set", name));
    out += *value;
    pos = close + 1;
  }
  return out;
}

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  };
}

void ServiceConfig::validate(const orchestrator::RoutingTable& routing) const {
  if (port < 0 || port > 65535) throw ConfigError(fmt::format("listen port {} out of range", port));
  if (!(mirage_threshold >= 0.0 && mirage_threshold <= 1.0)) throw ConfigError("mirage threshold must be in [0, 1]");
  auto need = [&](Modality m, const std::string& where) {
    if (!backends.count(m)) {
      throw ConfigError(fmt::format("routing {} names {} but no backend is configured for it", where, to_string(m)));
    }
  };
  for (const auto& c : routing.conditions) {
    for (const auto& r : c.routines) need(r.modality, fmt::format("condition '{}'", c.name));
  }
  for (const auto& t : routing.terms) need(t.modality, fmt::format("term '{}'", t.keyword));
  for (const auto& [m, spec] : backends) {
    if (spec.modality != m) throw ConfigError(fmt::format("backend '{}' modality mismatch", spec.id));
    if (spec.kind != gateway::BackendKind::Remote && spec.table_path.empty()) {
      throw ConfigError(fmt::format("mock backend '{}' needs a table path", spec.id));
    }
    if (spec.kind == gateway::BackendKind::Remote && spec.remote.base_url.empty()) {
      throw ConfigError(fmt::format("remote backend '{}' needs base_url", spec.id));
    }
  }
}

namespace {

// Full-line comments are left alone so they may mention ${...} literally.
std::string interpolate_lines(const std::string& text, const EnvLookup& env) {
  std::string out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    end = end == std::string::npos ? text.size() : end + 1;
    const std::string line = text.substr(pos, end - pos);
    const auto first = line.find_first_not_of(" \t");
    out += first != std::string::npos && line[first] == '#' ? line : interpolate_env(line, env);
    pos = end;
  }
  return out;
}

// An empty interpolation leaves a YAML null, which yaml-cpp would spell "null".
std::string str(const YAML::Node& n, const std::string& fallback) {
  return n && n.IsScalar() ? n.Scalar() : fallback;
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

gateway::BackendSpec backend_spec(const YAML::Node& n, Modality m, const std::string& base, const std::string& id) {
  gateway::BackendSpec spec;
  spec.id = str(n["id"], id);
  spec.modality = m;
  spec.kind = gateway::backend_kind_from_string(str(n["kind"], ""));
  spec.table_path = resolve(base, str(n["table"], ""));
  auto& r = spec.remote;
  r.base_url = str(n["base_url"], "");
  r.auth_env = str(n["auth_env"], "");
  r.model = str(n["model"], "");
  r.timeout_ms = n["timeout_ms"].as<int>(r.timeout_ms);
  r.max_retries = n["max_retries"].as<int>(r.max_retries);
  r.retry.base = std::chrono::milliseconds(n["backoff_ms"].as<int>(static_cast<int>(r.retry.base.count())));
  r.retry.factor = n["backoff_factor"].as<double>(r.retry.factor);
  r.retry.jitter = n["backoff_jitter"].as<double>(r.retry.jitter);
  return spec;
}

}  // namespace

ServiceConfig parse_config(const std::string& yaml_text, const std::string& base_dir, const EnvLookup& env) {
  ServiceConfig cfg;
  try {
    const auto root = YAML::Load(interpolate_lines(yaml_text, env));
    if (!root || root.IsNull()) return cfg;
    if (auto l = root["listen"]) {
      cfg.host = str(l["host"], cfg.host);
      cfg.port = l["port"].as<int>(cfg.port);
    }
    cfg.data_dir = resolve(base_dir, str(root["data_dir"], cfg.data_dir));
    cfg.seed = root["seed"].as<std::uint64_t>(cfg.seed);
    if (auto t = root["auth_token"]; t && t.IsScalar() && !t.Scalar().empty()) cfg.auth_token = t.Scalar();
    if (auto m = root["mirage"]) cfg.mirage_threshold = m["threshold"].as<double>(cfg.mirage_threshold);
    if (auto p = root["paths"]) {
      cfg.routing_table = resolve(base_dir, str(p["routing_table"], ""));
      cfg.polarity_lexicon = resolve(base_dir, str(p["polarity_lexicon"], ""));
      cfg.failure_keywords = resolve(base_dir, str(p["failure_keywords"], ""));
      cfg.templates = resolve(base_dir, str(p["templates"], ""));
      cfg.records = resolve(base_dir, str(p["records"], ""));
    }
    if (auto b = root["backends"]) {
      for (const auto& kv : b) {
        const auto m = modality_from_string(kv.first.as<std::string>());
        cfg.backends[m] = backend_spec(kv.second, m, base_dir, fmt::format("{}-expert", to_string(m)));
      }
    }
    if (auto d = root["decomposer"]) cfg.decomposer = backend_spec(d, Modality::Ecg, base_dir, "decomposer");
    if (auto g = root["grpo"]) {
      auto& c = cfg.grpo;
      c.group_size = g["group_size"].as<std::size_t>(c.group_size);
      c.kl_coeff = g["kl_coeff"].as<double>(c.kl_coeff);
      c.clip_epsilon = g["clip_epsilon"].as<double>(c.clip_epsilon);
      c.learning_rate = g["learning_rate"].as<double>(c.learning_rate);
      c.epochs = g["epochs"].as<std::size_t>(c.epochs);
      c.inner_updates = g["inner_updates"].as<std::size_t>(c.inner_updates);
      c.seed = g["seed"].as<std::uint64_t>(cfg.seed);
    } else {
      cfg.grpo.seed = cfg.seed;
    }
  } catch (const YAML::Exception& e) {
    throw ConfigError(fmt::format("configuration: {}", e.what()));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(fmt::format("configuration: {}", e.what()));
  }
  return cfg;
}

ServiceConfig load_config(const std::string& path, const EnvLookup& env) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("cannot read configuration '{}': {}", path, e.what()));
  }
  return parse_config(text, fs::absolute(path).parent_path().string(), env);
}

}  // namespace cardio::service
