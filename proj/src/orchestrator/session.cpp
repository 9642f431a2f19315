#include <algorithm>

#include <fmt/format.h>

#include "cardio/orchestrator.hpp"

namespace cardio::orchestrator {

using nlohmann::json;

void to_json(json& j, const Session& s) {
  json media = json::object();
  for (const auto& [m, refs] : s.media) media[std::string(to_string(m))] = refs;
  json history = json::array();
  for (const auto& t : s.history) history.push_back({{"user_text", t.user_text}, {"result", t.result}});
  j = json{{"id", s.id}, {"history", history}, {"media", media}, {"locked", s.locked}};
}

void from_json(const json& j, Session& s) {
  s = Session{};
  s.id = j.at("id").get<std::string>();
  for (const auto& t : j.value("history", json::array())) {
    s.history.push_back(Turn{t.at("user_text").get<std::string>(), t.at("result").get<OrchestrationResult>()});
  }
  const auto media = j.value("media", json::object());
  for (const auto& [k, v] : media.items()) {
    s.media[modality_from_string(k)] = v.get<std::vector<MediaRef>>();
  }
  for (const auto& m : j.value("locked", json::array())) s.locked.insert(m.get<Modality>());
}

SessionManager::SessionManager(std::shared_ptr<const Orchestrator> orchestrator, BackendMap backends)
    : orchestrator_(std::move(orchestrator)), backends_(std::move(backends)) {
  if (!orchestrator_) throw std::invalid_argument("SessionManager: null orchestrator");
}

std::shared_ptr<SessionManager::Slot> SessionManager::slot(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw UnknownSession(fmt::format("unknown session '{}'", id));
  return it->second;
}

std::string SessionManager::create(const std::string& id_hint) {
  std::lock_guard lock(mutex_);
  std::string id = id_hint;
  if (id.empty() || sessions_.count(id)) {
    do {
      id = fmt::format("session-{}", ++counter_);
    } while (sessions_.count(id));
  }
  auto s = std::make_shared<Slot>();
  s->session.id = id;
  sessions_.emplace(id, std::move(s));
  return id;
}

void SessionManager::attach_media(const std::string& id, const MediaRef& ref) {
  if (ref.uri.empty()) throw std::invalid_argument("attach_media: empty uri");
  auto s = slot(id);
  std::lock_guard lock(s->mutex);
  if (s->busy || s->session.locked.count(ref.modality)) {
    throw MediaLocked(fmt::format("session '{}': {} media is referenced by a turn and cannot change", id,
                                  display_name(ref.modality)));
  }
  s->session.media[ref.modality].push_back(ref);
}

Session SessionManager::get(const std::string& id) const {
  auto s = slot(id);
  std::lock_guard lock(s->mutex);
  return s->session;
}

std::vector<std::string> SessionManager::ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : sessions_) out.push_back(id);
  return out;
}

void SessionManager::restore(Session session) {
  std::lock_guard lock(mutex_);
  // Keep generated ids unique after a restart.
  if (session.id.rfind("session-", 0) == 0) {
    try {
      counter_ = std::max<std::uint64_t>(counter_, std::stoull(session.id.substr(8)));
    } catch (const std::exception&) {
    }
  }
  auto s = std::make_shared<Slot>();
  const auto id = session.id;
  s->session = std::move(session);
  sessions_[id] = std::move(s);
}

std::size_t SessionManager::next_turn_index(const std::string& id) const {
  auto s = slot(id);
  std::lock_guard lock(s->mutex);
  return s->session.history.size();
}

OrchestrationResult SessionManager::chat_turn(const std::string& id, const std::string& user_text,
                                              const TraceSink& sink, std::optional<Modality> focus) {
  auto s = slot(id);
  MediaMap media;
  std::map<Modality, std::string> context;
  {
    std::lock_guard lock(s->mutex);
    if (s->busy) throw SessionBusy(fmt::format("session '{}' already has a turn in flight", id));
    s->busy = true;
    media = s->session.media;
    if (!s->session.history.empty()) {
      for (const auto& f : s->session.history.back().result.findings) context[f.modality] = f.answer_text;
    }
  }
  struct Release {
    Slot& slot;
    ~Release() {
      std::lock_guard lock(slot.mutex);
      slot.busy = false;
    }
  } release{*s};

  auto result = orchestrator_->orchestrate(user_text, media, backends_, sink, context, focus);

  std::lock_guard lock(s->mutex);
  for (const auto& f : result.findings) s->session.locked.insert(f.modality);
  for (auto m : result.degraded_modalities) s->session.locked.insert(m);
  s->session.history.push_back(Turn{user_text, result});
  return result;
}

}  // namespace cardio::orchestrator
