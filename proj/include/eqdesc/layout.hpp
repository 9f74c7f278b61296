#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eqdesc/expr.hpp"

namespace eqd {

struct LayoutChild;

// Box with a baseline: height above it, depth below it (pixels).
// Glyph boxes draw their font bitmap stretched over the whole box; Rule boxes
// are solid ink; List boxes only position their children.
struct LayoutBox {
  enum class Kind : std::uint8_t { List, Glyph, Rule };

  int width = 0;
  int height = 0;
  int depth = 0;
  Kind kind = Kind::List;
  char32_t glyph = 0;
  std::vector<LayoutChild> children;
};

struct LayoutChild {
  int dx;     // from the parent's left edge
  int shift;  // baseline raise relative to the parent's baseline
  LayoutBox box;
};

// Grayscale image, row-major; background 1.0, ink 0.0.
struct EqImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }
};

struct RenderConfig {
  int style_size = 16;
  int height = 64;
  int width = 256;
  int padding = 2;
};

// Glyphs available in the built-in 8x12 font.
bool font_has_glyph(char32_t c);

// Throws std::invalid_argument for style_size < 8.
LayoutBox layout(const Expr& e, int style_size = 16);

// Draws the box at natural size, crops to the ink, shrinks (never enlarges)
// to fit inside the padded target and centers it. Throws
// std::invalid_argument for targets smaller than 16x16.
EqImage rasterize(const LayoutBox& box, int height = 64, int width = 256, int padding = 2);

EqImage render_equation(const Expr& e, const RenderConfig& config = {});

// True when every child lies inside its parent's box, recursively.
bool layout_within_bounds(const LayoutBox& box);

// Binary PGM (P5, maxval 255). Throws std::runtime_error on I/O or format errors.
std::string encode_pgm(const EqImage& img);
void write_pgm(const std::string& path, const EqImage& img);
EqImage read_pgm(const std::string& path);

}  // namespace eqd
