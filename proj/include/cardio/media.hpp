#pragma once

// Media intake: ECG XML parsing and grid rendering, frame patchification and
// rule-based series selection over study manifests.

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cardio/domain.hpp"

namespace cardio::media {

inline constexpr std::array<std::string_view, 12> kLeadNames{"I",   "II",  "III", "aVR", "aVL", "aVF",
                                                             "V1",  "V2",  "V3",  "V4",  "V5",  "V6"};
inline constexpr std::array<int, 3> kSupportedRates{250, 500, 1000};

struct EcgRecording {
  int sample_rate = 500;
  std::array<std::vector<double>, 12> leads;  // millivolts, canonical order

  double duration() const { return static_cast<double>(leads[0].size()) / sample_rate; }
  bool operator==(const EcgRecording&) const = default;
};

class EcgParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Schema (see docs/ecg_xml.md):
///   <ecg>
///     <lead name="I" rate="500" gain="200">0 3 -2 ...</lead>  x12
///   </ecg>
/// gain is counts per millivolt. Leads may appear in any order.
EcgRecording parse_ecg_xml(std::string_view xml);
EcgRecording read_ecg_xml(const std::string& path);

/// Samples are written as round(mV * gain) counts.
std::string serialize_ecg_xml(const EcgRecording& rec, double gain = 1000.0);

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  Image() = default;
  Image(int w, int h, std::array<std::uint8_t, 3> fill = {0, 0, 0});
  std::array<std::uint8_t, 3> at(int x, int y) const;
  void set(int x, int y, std::array<std::uint8_t, 3> c);
  bool operator==(const Image&) const = default;
};

std::string encode_ppm(const Image& img);
Image decode_ppm(std::string_view bytes);
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

struct Calibration {
  double paper_speed_mm_s = 25.0;
  double gain_mm_mv = 10.0;
  double px_per_mm_x = 0.0;  // time compression
  double px_per_mm_y = 0.0;  // amplitude scale
  double major_x = 0.0;      // 5 mm grid pitch in pixels
  double major_y = 0.0;
  double minor_x = 0.0;      // 1 mm
  double minor_y = 0.0;
  int cell_width = 0;
  int cell_height = 0;
};

inline constexpr int kGridRows = 4;
inline constexpr int kGridCols = 3;

struct RasterGrid {
  Image image;
  Calibration calibration;
};

inline constexpr std::array<std::uint8_t, 3> kBackground{255, 255, 255};
inline constexpr std::array<std::uint8_t, 3> kMinorGrid{255, 214, 214};
inline constexpr std::array<std::uint8_t, 3> kMajorGrid{236, 128, 128};
inline constexpr std::array<std::uint8_t, 3> kTrace{0, 0, 0};

/// Calibration for a width x height canvas and a recording of `duration` s.
Calibration calibrate(int width, int height, double duration);

/// 4 rows x 3 columns, lead i in row i / 3, column i % 3. 1 mV spans a quarter
/// of the cell height. Throws std::invalid_argument below 96x96.
RasterGrid render_ecg_grid(const EcgRecording& rec, int width, int height);

struct Patch {
  int row = 0;
  int col = 0;
  int frame = 0;
  std::vector<std::uint8_t> rgb;  // patch_size^2 * 3
};

struct PatchSequence {
  int patch_size = 16;
  int width = 0;  // source dimensions before padding
  int height = 0;
  int frames = 0;
  std::vector<Patch> patches;
};

/// Zero-pads right/bottom to multiples of patch_size; row-major per frame.
PatchSequence patchify(const std::vector<Image>& frames, int patch_size = 16);
PatchSequence patchify(const Image& frame, int patch_size = 16);

/// Padded frames rebuilt from the tiles.
std::vector<Image> reassemble(const PatchSequence& seq);

enum class SequenceKind { Cine, Lge, Other };
enum class Plane { ShortAxis, LongAxis, FourChamber, Other };

struct Series {
  std::string series_id;
  std::string description;
  SequenceKind kind = SequenceKind::Other;
  Plane plane = Plane::Other;
  std::vector<std::string> frames;
  bool operator==(const Series&) const = default;
};

struct StudyManifest {
  std::string study_id;
  Modality modality = Modality::Cmr;
  std::vector<Series> series;
};

StudyManifest parse_manifest(const nlohmann::json& j);
StudyManifest read_manifest(const std::string& path);
nlohmann::json to_json(const StudyManifest& m);

enum class Intent { Function, Fibrosis, Volumetry, General };

std::string_view to_string(Intent i);
Intent intent_from_string(std::string_view text);

/// Intent suggested by the wording of a clinical question.
Intent infer_intent(std::string_view question);

struct Selection {
  std::vector<Series> series;
  std::optional<std::string> advisory;
};

Selection select_sequences(const StudyManifest& manifest, Intent intent);

}  // namespace cardio::media
