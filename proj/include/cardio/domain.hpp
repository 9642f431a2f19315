#pragma once

// Shared vocabulary: modalities, media references, benchmark items and the
// request/response records exchanged with modality experts.

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace cardio {

enum class Modality { Ecg, Echo, Cmr };

inline constexpr std::array<Modality, 3> kAllModalities{Modality::Ecg, Modality::Echo, Modality::Cmr};

std::string_view to_string(Modality m);
std::optional<Modality> parse_modality(std::string_view text);
/// Like parse_modality but throws std::invalid_argument on unknown tags.
Modality modality_from_string(std::string_view text);
/// Upper-case label used in human-facing text ("ECG", "Echo", "CMR").
std::string_view display_name(Modality m);

enum class MediaKind { Image, Video, SignalXml, StudyManifest };

std::string_view to_string(MediaKind k);
MediaKind media_kind_from_string(std::string_view text);

struct MediaRef {
  Modality modality = Modality::Ecg;
  std::string uri;
  MediaKind kind = MediaKind::Image;

  friend bool operator==(const MediaRef&, const MediaRef&) = default;
};

enum class AnswerFormat { Mcq, Open };

struct AnswerOption {
  char label = 'A';
  std::string text;

  friend bool operator==(const AnswerOption&, const AnswerOption&) = default;
};

inline constexpr std::string_view kNoneOfTheOtherOptions = "None of the other options";

struct BenchmarkItem {
  std::string id;
  std::set<Modality> modality_set;
  std::string question;
  AnswerFormat format = AnswerFormat::Mcq;
  std::vector<AnswerOption> options;
  std::optional<char> correct_label;
  std::optional<std::string> reference_answer;
  std::string category;
  std::vector<MediaRef> media;
  std::vector<std::string> rephrasings;

  /// Option text for `label`, if present.
  const AnswerOption* option(char label) const;
  friend bool operator==(const BenchmarkItem&, const BenchmarkItem&) = default;
};

/// Grouping key used by reports: the single modality name, or "multimodal".
std::string modality_group(const BenchmarkItem& item);

enum class ProbeRole { Rephrase1, Rephrase2, Rephrase3, ImageAbsent };

inline constexpr std::array<ProbeRole, 4> kAllProbeRoles{ProbeRole::Rephrase1, ProbeRole::Rephrase2,
                                                         ProbeRole::Rephrase3, ProbeRole::ImageAbsent};

std::string_view to_string(ProbeRole r);
ProbeRole probe_role_from_string(std::string_view text);
inline bool is_media_present(ProbeRole r) { return r != ProbeRole::ImageAbsent; }

struct ExpertQuery {
  std::string question;
  Modality modality = Modality::Ecg;
  std::optional<std::vector<MediaRef>> media;
  ProbeRole probe_role = ProbeRole::Rephrase1;

  /// True when probe_role = image-absent exactly when media is absent.
  bool consistent() const { return (probe_role == ProbeRole::ImageAbsent) == !media.has_value(); }
};

struct ExpertResponse {
  std::string text;
  Modality modality = Modality::Ecg;
  ProbeRole probe_role = ProbeRole::Rephrase1;
  std::uint64_t latency_ms = 0;
  std::string backend_id;
  int attempts = 1;
};

struct LikertScore {
  int value = 3;
  std::string explanation;

  /// Throws std::invalid_argument unless 1 <= value <= 5.
  static LikertScore make(int value, std::string explanation = {});
};

struct Violation {
  std::string field;
  std::string message;
};

/// Every invariant violation of `item`; empty means valid. Never throws on
/// odd field contents.
std::vector<Violation> validate_item(const BenchmarkItem& item);

// JSON (snake_case field names, modalities as lowercase strings).
void to_json(nlohmann::json& j, Modality m);
void from_json(const nlohmann::json& j, Modality& m);
void to_json(nlohmann::json& j, const MediaRef& m);
void from_json(const nlohmann::json& j, MediaRef& m);
void to_json(nlohmann::json& j, const BenchmarkItem& item);
void from_json(const nlohmann::json& j, BenchmarkItem& item);
void to_json(nlohmann::json& j, const ExpertResponse& r);
void from_json(const nlohmann::json& j, ExpertResponse& r);
void to_json(nlohmann::json& j, const LikertScore& s);
void from_json(const nlohmann::json& j, LikertScore& s);

/// Reads a JSON-Lines benchmark. Throws JsonLinesError carrying the 1-based
/// line number of the first malformed line.
std::vector<BenchmarkItem> read_benchmark(const std::string& path);
void write_benchmark(const std::string& path, const std::vector<BenchmarkItem>& items);

class JsonLinesError : public std::runtime_error {
 public:
  JsonLinesError(std::string path, std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
  std::size_t line_;
};

/// Parses each non-blank line of a JSON-Lines file.
std::vector<nlohmann::json> read_json_lines(const std::string& path);

/// Writes `contents` to `path` via a temporary file and rename.
void write_file_atomic(const std::string& path, std::string_view contents);
std::string read_file(const std::string& path);

}  // namespace cardio
