#pragma once

#include <array>
#include <cstdint>

namespace eqd::font {

inline constexpr int kCols = 8;
inline constexpr int kRows = 12;
inline constexpr int kAscent = 9;  // rows above the baseline

// Row-major bits of one glyph, '#' = ink. Returns nullptr for unknown glyphs.
const std::array<const char*, kRows>* glyph_rows(char32_t c);

}  // namespace eqd::font
