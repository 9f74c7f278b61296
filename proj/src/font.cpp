#include "font.hpp"

#include <map>

namespace eqd::font {

namespace {

using Rows = std::array<const char*, kRows>;

constexpr const char* _ = "........";

const std::map<char32_t, Rows>& table() {
  static const std::map<char32_t, Rows> t = {
      // digits
      {U'0', {_, "..####..", ".##..##.", ".##..##.", ".##.###.", ".###.##.", ".##..##.", ".##..##.", "..####..", _, _, _}},
      {U'1', {_, "...##...", "..###...", ".####...", "...##...", "...##...", "...##...", "...##...", ".######.", _, _, _}},
      {U'2', {_, "..####..", ".##..##.", ".....##.", "....##..", "...##...", "..##....", ".##.....", ".######.", _, _, _}},
      {U'3', {_, "..####..", ".##..##.", ".....##.", "...###..", ".....##.", ".....##.", ".##..##.", "..####..", _, _, _}},
      {U'4', {_, "....##..", "...###..", "..####..", ".##.##..", ".######.", "....##..", "....##..", "....##..", _, _, _}},
      {U'5', {_, ".######.", ".##.....", ".#####..", ".....##.", ".....##.", ".....##.", ".##..##.", "..####..", _, _, _}},
      {U'6', {_, "..####..", ".##.....", ".##.....", ".#####..", ".##..##.", ".##..##.", ".##..##.", "..####..", _, _, _}},
      {U'7', {_, ".######.", ".....##.", "....##..", "....##..", "...##...", "...##...", "..##....", "..##....", _, _, _}},
      {U'8', {_, "..####..", ".##..##.", ".##..##.", "..####..", ".##..##.", ".##..##.", ".##..##.", "..####..", _, _, _}},
      {U'9', {_, "..####..", ".##..##.", ".##..##.", ".##..##.", "..#####.", ".....##.", ".....##.", "..####..", _, _, _}},
      // letters
      {U'a', {_, _, _, "..####..", ".....##.", "..#####.", ".##..##.", ".##..##.", "..#####.", _, _, _}},
      {U'c', {_, _, _, "..####..", ".##..##.", ".##.....", ".##.....", ".##..##.", "..####..", _, _, _}},
      {U'd', {".....##.", ".....##.", ".....##.", "..#####.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", "..#####.", _, _, _}},
      {U'e', {_, _, _, "..####..", ".##..##.", ".######.", ".##.....", ".##..##.", "..####..", _, _, _}},
      {U'g', {_, _, _, "..#####.", ".##..##.", ".##..##.", ".##..##.", "..#####.", ".....##.", ".##..##.", "..####..", _}},
      {U'i', {_, "...##...", _, "..###...", "...##...", "...##...", "...##...", "...##...", "..####..", _, _, _}},
      {U'l', {"..###...", "...##...", "...##...", "...##...", "...##...", "...##...", "...##...", "...##...", "..####..", _, _, _}},
      {U'm', {_, _, _, ".##.##..", ".######.", ".##.#.#.", ".##.#.#.", ".##.#.#.", ".##.#.#.", _, _, _}},
      {U'n', {_, _, _, ".#####..", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", _, _, _}},
      {U'o', {_, _, _, "..####..", ".##..##.", ".##..##.", ".##..##.", ".##..##.", "..####..", _, _, _}},
      {U's', {_, _, _, "..#####.", ".##.....", "..####..", ".....##.", ".....##.", ".#####..", _, _, _}},
      {U't', {_, "..##....", "..##....", ".#####..", "..##....", "..##....", "..##....", "..##..#.", "...###..", _, _, _}},
      {U'x', {_, _, _, ".##..##.", "..####..", "...##...", "...##...", "..####..", ".##..##.", _, _, _}},
      {U'y', {_, _, _, ".##..##.", ".##..##.", ".##..##.", ".##..##.", "..#####.", ".....##.", ".##..##.", "..####..", _}},
      {U'z', {_, _, _, ".######.", ".....##.", "....##..", "...##...", "..##....", ".######.", _, _, _}},
      // operators and relations
      {U'+', {_, _, "...##...", "...##...", ".######.", ".######.", "...##...", "...##...", _, _, _, _}},
      {U'-', {_, _, _, _, ".######.", ".######.", _, _, _, _, _, _}},
      {U'=', {_, _, ".######.", ".######.", _, _, ".######.", ".######.", _, _, _, _}},
      {U'>', {_, ".##.....", "..##....", "...##...", "....##..", "....##..", "...##...", "..##....", ".##.....", _, _, _}},
      {U'<', {_, ".....##.", "....##..", "...##...", "..##....", "..##....", "...##...", "....##..", ".....##.", _, _, _}},
      {U'≥', {".##.....", "..##....", "...##...", "....##..", "...##...", "..##....", ".##.....", _, ".######.", _, _, _}},
      {U'≤', {".....##.", "....##..", "...##...", "..##....", "...##...", "....##..", ".....##.", _, ".######.", _, _, _}},
      {U'.', {_, _, _, _, _, _, _, "..##....", "..##....", _, _, _}},
      {U'·', {_, _, _, _, "...##...", "...##...", _, _, _, _, _, _}},
      {U'→', {_, _, _, ".....#..", "......#.", "########", "......#.", ".....#..", _, _, _, _}},
      // stretchable delimiters use the full cell
      {U'(', {".....##.", "....##..", "...##...", "..##....", "..##....", "..##....", "..##....", "..##....", "..##....", "...##...", "....##..", ".....##."}},
      {U')', {".##.....", "..##....", "...##...", "....##..", "....##..", "....##..", "....##..", "....##..", "....##..", "...##...", "..##....", ".##....."}},
      {U'{', {"....###.", "...##...", "...##...", "...##...", "..##....", ".##.....", ".##.....", "..##....", "...##...", "...##...", "...##...", "....###."}},
      {U'∫', {"....###.", "...##...", "...##...", "...##...", "...##...", "...##...", "...##...", "...##...", "...##...", "...##...", "...##...", ".###...."}},
      {U'√', {"......##", "......##", ".....##.", ".....##.", "....##..", "....##..", "...##...", "##.##...", ".###....", ".###....", "..#.....", "..#....."}},
  };
  return t;
}

}  // namespace

const Rows* glyph_rows(char32_t c) {
  const auto& t = table();
  auto it = t.find(c);
  return it == t.end() ? nullptr : &it->second;
}

}  // namespace eqd::font
