#include "bevmem/image_io.hpp"

#include <algorithm>
#include <fstream>

BEVMEM_NS_BEGIN

namespace {

void write_pnm(const std::string& path, const char* magic, int h, int w, int channels,
               const std::vector<std::uint8_t>& data) {
  if (static_cast<std::size_t>(h) * w * channels != data.size())
    throw ShapeError("image write: pixel buffer size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << magic << "\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
}

}  // namespace

void write_pgm(const std::string& path, int h, int w, const std::vector<std::uint8_t>& gray) {
  write_pnm(path, "P5", h, w, 1, gray);
}

void write_ppm(const std::string& path, int h, int w, const std::vector<std::uint8_t>& rgb) {
  write_pnm(path, "P6", h, w, 3, rgb);
}

std::vector<std::uint8_t> render_heatmap(const OverlapHeatmap& h, int frame_idx) {
  const int n = h.spec.h_cells * h.spec.w_cells;
  std::vector<std::uint8_t> gray(static_cast<std::size_t>(n));
  const double denom = static_cast<double>(frame_idx + 1);
  for (int p = 0; p < n; ++p) {
    const double v = 255.0 * static_cast<double>(h.map.v[static_cast<std::size_t>(p)]) / denom;
    gray[static_cast<std::size_t>(p)] =
        static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return gray;
}

std::vector<std::uint8_t> render_class_map(const std::vector<std::uint8_t>& labels, int h, int w) {
  if (static_cast<std::size_t>(h) * w != labels.size())
    throw ShapeError("render_class_map: label buffer size mismatch");
  static const std::uint8_t palette[kNumClasses][3] = {
      {0, 0, 0},      // background
      {255, 0, 0},    // ped_crossing
      {0, 0, 255},    // divider
      {0, 255, 0},    // boundary
  };
  std::vector<std::uint8_t> rgb(labels.size() * 3);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const std::uint8_t c = labels[p] < kNumClasses ? labels[p] : 0;
    rgb[p * 3 + 0] = palette[c][0];
    rgb[p * 3 + 1] = palette[c][1];
    rgb[p * 3 + 2] = palette[c][2];
  }
  return rgb;
}

BEVMEM_NS_END
