#pragma once

#include "bevmem/heatmap.hpp"
#include "bevmem/synth.hpp"

BEVMEM_NS_BEGIN

// Binary PGM (P5) / PPM (P6) writers; dependency-free and diffable.
void write_pgm(const std::string& path, int h, int w, const std::vector<std::uint8_t>& gray);
void write_ppm(const std::string& path, int h, int w, const std::vector<std::uint8_t>& rgb);

// Heatmap rendered as 8-bit grayscale, v -> round(255 * v / (t + 1)) where t
// is the frame index of the heatmap state.
std::vector<std::uint8_t> render_heatmap(const OverlapHeatmap& h, int frame_idx);

// Class map palette: background black, ped crossing red, divider blue,
// boundary green.
std::vector<std::uint8_t> render_class_map(const std::vector<std::uint8_t>& labels, int h, int w);

BEVMEM_NS_END
