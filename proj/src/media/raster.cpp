#include <algorithm>
#include <cmath>
#include <cstdlib>

#include <fmt/format.h>

#include "cardio/media.hpp"

namespace cardio::media {

Image::Image(int w, int h, std::array<std::uint8_t, 3> fill) : width(w), height(h) {
  if (w <= 0 || h <= 0) throw std::invalid_argument("Image: dimensions must be positive");
  rgb.resize(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3);
  for (std::size_t i = 0; i < rgb.size(); i += 3) std::copy(fill.begin(), fill.end(), rgb.begin() + i);
}

std::array<std::uint8_t, 3> Image::at(int x, int y) const {
  const auto i = (static_cast<std::size_t>(y) * width + x) * 3;
  return {rgb.at(i), rgb.at(i + 1), rgb.at(i + 2)};
}

void Image::set(int x, int y, std::array<std::uint8_t, 3> c) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const auto i = (static_cast<std::size_t>(y) * width + x) * 3;
  rgb[i] = c[0];
  rgb[i + 1] = c[1];
  rgb[i + 2] = c[2];
}

std::string encode_ppm(const Image& img) {
  std::string out = fmt::format("P6\n{} {}\n255\n", img.width, img.height);
  out.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  return out;
}

Image decode_ppm(std::string_view bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const auto start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return std::string(bytes.substr(start, pos - start));
  };
  if (token() != "P6") throw std::invalid_argument("not a binary PPM (P6)");
  int w = 0;
  int h = 0;
  int maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw std::invalid_argument("malformed PPM header");
  }
  if (maxval != 255) throw std::invalid_argument("only 8-bit PPM is supported");
  ++pos;  // single whitespace before the raster
  Image img(w, h);
  if (bytes.size() - std::min(pos, bytes.size()) < img.rgb.size()) throw std::invalid_argument("truncated PPM raster");
  std::copy_n(bytes.data() + pos, img.rgb.size(), reinterpret_cast<char*>(img.rgb.data()));
  return img;
}

void write_ppm(const std::string& path, const Image& img) { write_file_atomic(path, encode_ppm(img)); }

Image read_ppm(const std::string& path) { return decode_ppm(read_file(path)); }

Calibration calibrate(int width, int height, double duration) {
  if (width < 96 || height < 96) throw std::invalid_argument("render: canvas must be at least 96x96");
  if (!(duration > 0.0)) throw std::invalid_argument("render: recording has no duration");
  Calibration c;
  c.cell_width = width / kGridCols;
  c.cell_height = height / kGridRows;
  c.px_per_mm_x = c.cell_width / (duration * c.paper_speed_mm_s);
  // A 1 mV deflection (10 mm) spans a quarter of the cell height.
  c.px_per_mm_y = c.cell_height / 4.0 / c.gain_mm_mv;
  c.minor_x = c.px_per_mm_x;
  c.minor_y = c.px_per_mm_y;
  c.major_x = 5.0 * c.px_per_mm_x;
  c.major_y = 5.0 * c.px_per_mm_y;
  return c;
}

namespace {

void line(Image& img, int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> color) {
  const int dx = std::abs(x1 - x0);
  const int dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1;
  const int sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    img.set(x0, y0, color);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void draw_grid(Image& img, const Calibration& c, int x0, int y0) {
  const int baseline = y0 + c.cell_height / 2;
  // Minor lines only when they stay at least 2 px apart.
  for (int pass = 0; pass < 2; ++pass) {
    const bool major = pass == 1;
    const double sx = major ? c.major_x : c.minor_x;
    const double sy = major ? c.major_y : c.minor_y;
    if (sx >= 2.0) {
      for (int k = 0;; ++k) {
        const auto dx = static_cast<int>(std::lround(k * sx));
        if (dx >= c.cell_width) break;
        for (int y = y0; y < y0 + c.cell_height; ++y) img.set(x0 + dx, y, major ? kMajorGrid : kMinorGrid);
      }
    }
    if (sy >= 2.0) {
      for (int k = 0;; ++k) {
        const auto dy = static_cast<int>(std::lround(k * sy));
        const int up = baseline - dy;
        const int down = baseline + dy;
        if (up < y0 && down >= y0 + c.cell_height) break;
        for (int x = x0; x < x0 + c.cell_width; ++x) {
          if (up >= y0) img.set(x, up, major ? kMajorGrid : kMinorGrid);
          if (down < y0 + c.cell_height) img.set(x, down, major ? kMajorGrid : kMinorGrid);
        }
      }
    }
  }
}

}  // namespace

RasterGrid render_ecg_grid(const EcgRecording& rec, int width, int height) {
  RasterGrid out;
  out.calibration = calibrate(width, height, rec.duration());
  const auto& c = out.calibration;
  out.image = Image(width, height, kBackground);
  const double px_per_mv = c.cell_height / 4.0;

  for (std::size_t lead = 0; lead < 12; ++lead) {
    const int x0 = static_cast<int>(lead % kGridCols) * c.cell_width;
    const int y0 = static_cast<int>(lead / kGridCols) * c.cell_height;
    draw_grid(out.image, c, x0, y0);

    const auto& s = rec.leads[lead];
    const int baseline = y0 + c.cell_height / 2;
    const auto n = static_cast<long long>(s.size());
    int px = -1;
    int py = 0;
    for (long long i = 0; i < n; ++i) {
      const int x = x0 + static_cast<int>(i * c.cell_width / n);
      const auto dy = std::llround(s[static_cast<std::size_t>(i)] * px_per_mv);
      const int y = static_cast<int>(std::clamp<long long>(baseline - dy, y0, y0 + c.cell_height - 1));
      if (px < 0) {
        out.image.set(x, y, kTrace);
      } else {
        line(out.image, px, py, x, y, kTrace);
      }
      px = x;
      py = y;
    }
  }
  return out;
}

PatchSequence patchify(const std::vector<Image>& frames, int patch_size) {
  if (frames.empty()) throw std::invalid_argument("patchify: no frames");
  if (patch_size <= 0) throw std::invalid_argument("patchify: patch size must be positive");
  PatchSequence seq;
  seq.patch_size = patch_size;
  seq.width = frames[0].width;
  seq.height = frames[0].height;
  seq.frames = static_cast<int>(frames.size());
  if (seq.width <= 0 || seq.height <= 0) throw std::invalid_argument("patchify: empty frame");
  const int rows = (seq.height + patch_size - 1) / patch_size;
  const int cols = (seq.width + patch_size - 1) / patch_size;
  for (int f = 0; f < seq.frames; ++f) {
    const auto& img = frames[static_cast<std::size_t>(f)];
    if (img.width != seq.width || img.height != seq.height) {
      throw std::invalid_argument("patchify: frames differ in size");
    }
    for (int r = 0; r < rows; ++r) {
      for (int col = 0; col < cols; ++col) {
        Patch p{r, col, f, std::vector<std::uint8_t>(static_cast<std::size_t>(patch_size * patch_size * 3), 0)};
        for (int y = 0; y < patch_size; ++y) {
          const int sy = r * patch_size + y;
          if (sy >= img.height) break;
          for (int x = 0; x < patch_size; ++x) {
            const int sx = col * patch_size + x;
            if (sx >= img.width) break;
            const auto px = img.at(sx, sy);
            std::copy(px.begin(), px.end(), p.rgb.begin() + (y * patch_size + x) * 3);
          }
        }
        seq.patches.push_back(std::move(p));
      }
    }
  }
  return seq;
}

PatchSequence patchify(const Image& frame, int patch_size) { return patchify(std::vector<Image>{frame}, patch_size); }

std::vector<Image> reassemble(const PatchSequence& seq) {
  const int ps = seq.patch_size;
  const int rows = (seq.height + ps - 1) / ps;
  const int cols = (seq.width + ps - 1) / ps;
  std::vector<Image> out;
  for (int f = 0; f < seq.frames; ++f) out.emplace_back(cols * ps, rows * ps);
  for (const auto& p : seq.patches) {
    auto& img = out.at(static_cast<std::size_t>(p.frame));
    for (int y = 0; y < ps; ++y) {
      for (int x = 0; x < ps; ++x) {
        const auto i = static_cast<std::size_t>((y * ps + x) * 3);
        img.set(p.col * ps + x, p.row * ps + y, {p.rgb[i], p.rgb[i + 1], p.rgb[i + 2]});
      }
    }
  }
  return out;
}

}  // namespace cardio::media
