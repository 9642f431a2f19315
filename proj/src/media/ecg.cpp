#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <fmt/format.h>

#include "cardio/media.hpp"

namespace cardio::media {

namespace pt = boost::property_tree;

namespace {

std::vector<long long> parse_counts(std::string_view text, std::string_view lead) {
  std::vector<long long> out;
  const char* p = text.data();
  const char* end = text.data() + text.size();
  while (p < end) {
    while (p < end && std::isspace(static_cast<unsigned char>(*p))) ++p;
    if (p == end) break;
    long long v = 0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc{} || (next < end && !std::isspace(static_cast<unsigned char>(*next)))) {
      throw EcgParseError(fmt::format("lead {}: non-integer sample near '{}'", lead,
                                      std::string_view(p, std::min<std::size_t>(12, static_cast<std::size_t>(end - p)))));
    }
    out.push_back(v);
    p = next;
  }
  return out;
}

}  // namespace

EcgRecording parse_ecg_xml(std::string_view xml) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(xml)};
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    throw EcgParseError(fmt::format("malformed ECG XML: {}", e.message()));
  }
  const auto root = tree.get_child_optional("ecg");
  if (!root) throw EcgParseError("missing <ecg> root element");

  std::map<std::string, std::pair<int, std::vector<double>>> found;
  for (const auto& [tag, node] : *root) {
    if (tag != "lead") continue;
    const auto name = node.get<std::string>("<xmlattr>.name", "");
    if (std::find(kLeadNames.begin(), kLeadNames.end(), name) == kLeadNames.end()) {
      throw EcgParseError(fmt::format("unknown lead '{}'", name));
    }
    if (found.count(name)) throw EcgParseError(fmt::format("duplicate lead {}", name));
    const auto rate = node.get_optional<int>("<xmlattr>.rate");
    if (!rate) throw EcgParseError(fmt::format("lead {}: missing rate attribute", name));
    if (std::find(kSupportedRates.begin(), kSupportedRates.end(), *rate) == kSupportedRates.end()) {
      throw EcgParseError(fmt::format("unsupported sample rate {} Hz in lead {}", *rate, name));
    }
    const auto gain = node.get_optional<double>("<xmlattr>.gain");
    if (!gain || !(*gain > 0.0) || !std::isfinite(*gain)) {
      throw EcgParseError(fmt::format("lead {}: gain must be a positive number of counts per mV", name));
    }
    std::vector<double> mv;
    for (auto c : parse_counts(node.get_value<std::string>(), name)) mv.push_back(static_cast<double>(c) / *gain);
    found.emplace(name, std::make_pair(*rate, std::move(mv)));
  }

  EcgRecording rec;
  for (std::size_t i = 0; i < kLeadNames.size(); ++i) {
    auto it = found.find(std::string(kLeadNames[i]));
    if (it == found.end()) throw EcgParseError(fmt::format("missing lead {}", kLeadNames[i]));
    if (i == 0) rec.sample_rate = it->second.first;
    if (it->second.first != rec.sample_rate) {
      throw EcgParseError(fmt::format("lead {} rate {} Hz differs from {} Hz", kLeadNames[i], it->second.first,
                                      rec.sample_rate));
    }
    rec.leads[i] = std::move(it->second.second);
  }
  for (std::size_t i = 1; i < 12; ++i) {
    if (rec.leads[i].size() != rec.leads[0].size()) {
      throw EcgParseError(fmt::format("unequal lead lengths: {} has {} samples, {} has {}", kLeadNames[0],
                                      rec.leads[0].size(), kLeadNames[i], rec.leads[i].size()));
    }
  }
  if (rec.leads[0].empty()) throw EcgParseError("leads carry no samples");
  return rec;
}

EcgRecording read_ecg_xml(const std::string& path) { return parse_ecg_xml(read_file(path)); }

std::string serialize_ecg_xml(const EcgRecording& rec, double gain) {
  if (!(gain > 0.0)) throw std::invalid_argument("serialize_ecg_xml: gain must be positive");
  std::string out = "<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<ecg>\n";
  for (std::size_t i = 0; i < 12; ++i) {
    out += fmt::format("  <lead name=\"{}\" rate=\"{}\" gain=\"{}\">", kLeadNames[i], rec.sample_rate, gain);
    bool first = true;
    for (double v : rec.leads[i]) {
      out += fmt::format("{}{}", first ? "" : " ", std::llround(v * gain));
      first = false;
    }
    out += "</lead>\n";
  }
  out += "</ecg>\n";
  return out;
}

}  // namespace cardio::media
