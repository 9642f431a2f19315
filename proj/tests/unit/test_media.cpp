#include <algorithm>

#include <gtest/gtest.h>

#include "cardio/media.hpp"
#include "test_util.hpp"

using namespace cardio;
using namespace cardio::media;
using nlohmann::json;

namespace {

EcgRecording flat(int rate = 250, double seconds = 10.0) {
  EcgRecording rec;
  rec.sample_rate = rate;
  for (auto& l : rec.leads) l.assign(static_cast<std::size_t>(rate * seconds), 0.0);
  return rec;
}

// 1 mV square pulse in lead I from 2 s to 4 s.
EcgRecording pulse() {
  auto rec = flat();
  for (std::size_t i = 500; i < 1000; ++i) rec.leads[0][i] = 1.0;
  return rec;
}

// Trace pixels in column x of the given cell rows.
std::vector<int> ink_rows(const Image& img, int x, int y0, int y1) {
  std::vector<int> out;
  for (int y = y0; y < y1; ++y) {
    if (img.at(x, y) == kTrace) out.push_back(y);
  }
  return out;
}

// Rows of major horizontal grid lines in column x.
std::vector<int> major_rows(const Image& img, int x, int y0, int y1) {
  std::vector<int> out;
  for (int y = y0; y < y1; ++y) {
    if (img.at(x, y) == kMajorGrid) out.push_back(y);
  }
  return out;
}

std::string ecg_with_lead_dropped(const std::string& xml, const std::string& lead) {
  const auto start = xml.find("<lead name=\"" + lead + "\"");
  const auto end = xml.find("</lead>", start) + 7;
  return xml.substr(0, start) + xml.substr(end);
}

Series series(std::string id, SequenceKind k, Plane p) { return Series{std::move(id), "", k, p, {}}; }

std::vector<std::string> ids(const Selection& s) {
  std::vector<std::string> out;
  for (const auto& x : s.series) out.push_back(x.series_id);
  return out;
}

}  // namespace

TEST(EcgXml, ParsesAndReordersLeads) {
  const auto rec = read_ecg_xml(testutil::fixture_path("ecg_golden.xml"));
  EXPECT_EQ(rec.sample_rate, 250);
  EXPECT_DOUBLE_EQ(rec.duration(), 10.0);
  EXPECT_DOUBLE_EQ(rec.leads[0][50], 1.0);  // calibration pulse in lead I
  for (const auto& l : rec.leads) EXPECT_EQ(l.size(), 2500u);
}

TEST(EcgXml, TenSecondsAt500Hz) {
  const auto rec = parse_ecg_xml(serialize_ecg_xml(flat(500, 10.0)));
  EXPECT_DOUBLE_EQ(rec.duration(), 10.0);
  EXPECT_EQ(rec.leads[11].size(), 5000u);
}

TEST(EcgXml, SerializeParseIdentity) {
  auto rec = flat(1000, 1.0);
  for (std::size_t l = 0; l < 12; ++l) {
    for (std::size_t i = 0; i < rec.leads[l].size(); ++i) rec.leads[l][i] = double(int(i * 7 + l * 13) % 2001 - 1000) / 1000.0;
  }
  EXPECT_EQ(parse_ecg_xml(serialize_ecg_xml(rec, 1000.0)), rec);
}

TEST(EcgXml, ZeroCountsWithUnitGain) {
  std::string xml = "<ecg>";
  for (auto name : kLeadNames) xml += fmt::format("<lead name=\"{}\" rate=\"250\" gain=\"1\">0 0 0 0</lead>", name);
  xml += "</ecg>";
  const auto rec = parse_ecg_xml(xml);
  for (const auto& l : rec.leads) EXPECT_EQ(l, std::vector<double>(4, 0.0));
}

TEST(EcgXml, FaultsNameTheDefect) {
  const auto good = serialize_ecg_xml(flat(250, 1.0));
  auto expect_fault = [](const std::string& xml, const std::string& needle) {
    try {
      parse_ecg_xml(xml);
      ADD_FAILURE() << "no fault for " << needle;
    } catch (const EcgParseError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_fault(ecg_with_lead_dropped(good, "V6"), "missing lead V6");
  std::string rate = good;
  rate.replace(rate.find("rate=\"250\""), 10, "rate=\"300\"");
  expect_fault(rate, "unsupported sample rate 300");
  std::string shorter = good;
  shorter.replace(shorter.find("\">0 "), 4, "\">");
  expect_fault(shorter, "unequal lead lengths");
  expect_fault("<ecg><lead", "malformed");
  std::string junk = good;
  junk.replace(junk.find("\">0 "), 4, "\">x ");
  expect_fault(junk, "non-integer sample");
}

TEST(Render, GoldenBytes) {
  const auto rec = read_ecg_xml(testutil::fixture_path("ecg_golden.xml"));
  const auto grid = render_ecg_grid(rec, 360, 320);
  EXPECT_TRUE(encode_ppm(grid.image) == read_file(testutil::fixture_path("ecg_golden.ppm")));
  EXPECT_EQ(encode_ppm(render_ecg_grid(rec, 360, 320).image), encode_ppm(grid.image));
}

TEST(Render, CalibrationPulseIsTwoMajorBoxes) {
  const auto grid = render_ecg_grid(pulse(), 360, 320);
  const auto& c = grid.calibration;
  EXPECT_EQ(c.cell_width, 120);
  EXPECT_EQ(c.cell_height, 80);
  EXPECT_DOUBLE_EQ(c.major_y, 10.0);
  // column at 3 s sits on the pulse plateau; the rising edge is a vertical run
  const int plateau_x = 3 * c.cell_width / 10;
  const auto on = ink_rows(grid.image, plateau_x, 0, c.cell_height);
  ASSERT_EQ(on.size(), 1u);
  const int baseline = c.cell_height / 2;
  EXPECT_EQ(baseline - on[0], static_cast<int>(2 * c.major_y));
  // the rising edge is one sample step, drawn across two neighbouring columns
  const int edge_x = 2 * c.cell_width / 10;
  auto edge = ink_rows(grid.image, edge_x - 1, 0, c.cell_height);
  const auto next = ink_rows(grid.image, edge_x, 0, c.cell_height);
  edge.insert(edge.end(), next.begin(), next.end());
  const auto [lo, hi] = std::minmax_element(edge.begin(), edge.end());
  EXPECT_EQ(*hi - *lo, static_cast<int>(2 * c.major_y));
}

TEST(Render, FlatRecordingDrawsBaselinesAtCellCentres) {
  const auto grid = render_ecg_grid(flat(), 300, 400);
  const auto& c = grid.calibration;
  for (int lead = 0; lead < 12; ++lead) {
    const int x0 = (lead % 3) * c.cell_width;
    const int y0 = (lead / 3) * c.cell_height;
    const auto rows = ink_rows(grid.image, x0 + c.cell_width / 3, y0, y0 + c.cell_height);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0], y0 + c.cell_height / 2);
    EXPECT_FALSE(major_rows(grid.image, x0 + 1, y0, y0 + c.cell_height).empty());
  }
  EXPECT_THROW(render_ecg_grid(flat(), 95, 400), std::invalid_argument);
}

TEST(Render, RelativeCalibrationSurvivesResize) {
  const auto small = render_ecg_grid(pulse(), 360, 320);
  const auto big = render_ecg_grid(pulse(), 720, 640);
  auto measure = [](const RasterGrid& g) {
    const auto& c = g.calibration;
    const auto on = ink_rows(g.image, 3 * c.cell_width / 10, 0, c.cell_height);
    const int amplitude = c.cell_height / 2 - on.at(0);
    // spacing of major lines in a trace-free column of lead II's cell
    const auto rows = major_rows(g.image, c.cell_width + 1, 0, c.cell_height);
    return std::make_pair(amplitude, rows.at(1) - rows.at(0));
  };
  const auto [a1, s1] = measure(small);
  const auto [a2, s2] = measure(big);
  EXPECT_NEAR(a2, 2 * a1, 1);
  EXPECT_NEAR(s2, 2 * s1, 1);
  EXPECT_NEAR(double(a2) / s2, double(a1) / s1, 0.15);
  EXPECT_DOUBLE_EQ(big.calibration.px_per_mm_x, 2 * small.calibration.px_per_mm_x);
}

TEST(Ppm, RoundTripAndErrors) {
  Image img(5, 3, {1, 2, 3});
  img.set(4, 2, {9, 8, 7});
  EXPECT_EQ(decode_ppm(encode_ppm(img)), img);
  EXPECT_EQ(decode_ppm("P6\n# c\n1 1\n255\n\x01\x02\x03").at(0, 0), (std::array<std::uint8_t, 3>{1, 2, 3}));
  EXPECT_THROW(decode_ppm("P3\n1 1\n255\n"), std::invalid_argument);
  EXPECT_THROW(decode_ppm("P6\n2 2\n255\n\x01"), std::invalid_argument);
  EXPECT_EQ(read_ppm(testutil::data_path("samples/echo_sample.ppm")).width, 64);
}

TEST(Patchify, Counts) {
  EXPECT_EQ(patchify(Image(224, 224)).patches.size(), 196u);
  EXPECT_EQ(patchify(Image(16, 16)).patches.size(), 1u);
  const auto seq = patchify(Image(17, 16, {5, 5, 5}));
  ASSERT_EQ(seq.patches.size(), 2u);
  const auto& right = seq.patches[1];
  EXPECT_EQ(right.col, 1);
  EXPECT_EQ(right.rgb[0], 5);
  EXPECT_EQ(right.rgb[3], 0);  // zero padding past the edge
  EXPECT_THROW(patchify(std::vector<Image>{}), std::invalid_argument);
}

TEST(Patchify, RasterOrderAndExactReassembly) {
  std::vector<Image> frames;
  for (int f = 0; f < 3; ++f) {
    Image img(224, 224);
    for (int y = 0; y < 224; ++y) {
      for (int x = 0; x < 224; ++x) img.set(x, y, {std::uint8_t(x + f), std::uint8_t(y), std::uint8_t(x ^ y)});
    }
    frames.push_back(img);
  }
  const auto seq = patchify(frames);
  ASSERT_EQ(seq.patches.size(), 3u * 196u);
  for (std::size_t i = 0; i < seq.patches.size(); ++i) {
    const auto& p = seq.patches[i];
    EXPECT_EQ(std::size_t(p.frame * 196 + p.row * 14 + p.col), i);
  }
  EXPECT_EQ(reassemble(seq), frames);

  const Image odd(37, 21, {7, 7, 7});
  const auto padded = reassemble(patchify(odd)).at(0);
  EXPECT_EQ(padded.width, 48);
  EXPECT_EQ(padded.height, 32);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 48; ++x) {
      const std::array<std::uint8_t, 3> want = (x < 37 && y < 21) ? std::array<std::uint8_t, 3>{7, 7, 7}
                                                                  : std::array<std::uint8_t, 3>{0, 0, 0};
      ASSERT_EQ(padded.at(x, y), want) << x << "," << y;
    }
  }
}

TEST(Sequences, RoutingOnSixSeriesManifest) {
  const auto m = read_manifest(testutil::data_path("samples/cmr_manifest.json"));
  ASSERT_EQ(m.series.size(), 6u);
  EXPECT_EQ(ids(select_sequences(m, Intent::Fibrosis)), (std::vector<std::string>{"s4", "s5"}));
  EXPECT_EQ(ids(select_sequences(m, Intent::Function)), (std::vector<std::string>{"s1", "s2", "s3"}));
  EXPECT_EQ(ids(select_sequences(m, Intent::Volumetry)), (std::vector<std::string>{"s1"}));
  EXPECT_EQ(ids(select_sequences(m, Intent::General)),
            (std::vector<std::string>{"s1", "s2", "s3", "s4", "s5", "s6"}));
  EXPECT_FALSE(select_sequences(m, Intent::Fibrosis).advisory);
}

TEST(Sequences, PaperExamplesAndAdvisory) {
  StudyManifest m{"st", Modality::Cmr,
                  {series("b", SequenceKind::Lge, Plane::ShortAxis), series("a", SequenceKind::Cine, Plane::ShortAxis)}};
  EXPECT_EQ(ids(select_sequences(m, Intent::Fibrosis)), std::vector<std::string>{"b"});
  EXPECT_EQ(ids(select_sequences(m, Intent::Volumetry)), std::vector<std::string>{"a"});
  EXPECT_EQ(ids(select_sequences(m, Intent::General)), (std::vector<std::string>{"a", "b"}));
  StudyManifest lge_only{"st2", Modality::Cmr, {series("x", SequenceKind::Lge, Plane::FourChamber)}};
  const auto sel = select_sequences(lge_only, Intent::Function);
  EXPECT_TRUE(sel.series.empty());
  ASSERT_TRUE(sel.advisory);
  EXPECT_NE(sel.advisory->find("cine"), std::string::npos);
  EXPECT_THROW(select_sequences(StudyManifest{}, Intent::General), std::invalid_argument);
}

TEST(Sequences, SelectionIsASubMultiset) {
  const auto m = read_manifest(testutil::data_path("samples/cmr_manifest.json"));
  for (auto intent : {Intent::Function, Intent::Fibrosis, Intent::Volumetry, Intent::General}) {
    const auto sel = select_sequences(m, intent);
    for (const auto& s : sel.series) EXPECT_NE(std::find(m.series.begin(), m.series.end(), s), m.series.end());
    EXPECT_EQ(ids(select_sequences(m, intent)), ids(sel));
  }
}

TEST(Manifest, JsonRoundTripAndDuplicates) {
  const auto m = read_manifest(testutil::data_path("samples/cmr_manifest.json"));
  const auto j = to_json(m);
  EXPECT_EQ(to_json(parse_manifest(j)), j);
  auto dup = j;
  dup["series"].push_back(dup["series"][0]);
  EXPECT_THROW(parse_manifest(dup), std::invalid_argument);
}

TEST(Intent, InferredFromWording) {
  EXPECT_EQ(infer_intent("Is there late gadolinium enhancement?"), Intent::Fibrosis);
  EXPECT_EQ(infer_intent("What are the ventricular volumes?"), Intent::Volumetry);
  EXPECT_EQ(infer_intent("How is systolic function?"), Intent::Function);
  EXPECT_EQ(infer_intent("Anything notable?"), Intent::General);
  EXPECT_EQ(intent_from_string("volumetry"), Intent::Volumetry);
  EXPECT_THROW(intent_from_string("x"), std::invalid_argument);
}
