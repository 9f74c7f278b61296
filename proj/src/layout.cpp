#include "eqdesc/layout.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "font.hpp"

namespace eqd {

namespace {

constexpr int kMinSize = 6;

int script_size(int s) { return std::max(kMinSize, (s * 7 + 5) / 10); }
int glyph_width(int s) { return std::max(1, (font::kCols * s + 6) / font::kRows); }
int glyph_height(int s) { return (font::kAscent * s + 6) / font::kRows; }
int thin_space(int s) { return std::max(1, s / 6); }
int axis_height(int s) { return std::max(1, (4 * s + 6) / 12); }
int rule_thickness(int s) { return std::max(1, s / 12); }

LayoutBox glyph(char32_t c, int s) {
  LayoutBox b;
  b.kind = LayoutBox::Kind::Glyph;
  b.glyph = c;
  b.width = glyph_width(s);
  b.height = glyph_height(s);
  b.depth = s - b.height;
  return b;
}

// Glyph drawn over an arbitrary vertical extent.
LayoutBox stretched(char32_t c, int width, int height, int depth) {
  LayoutBox b;
  b.kind = LayoutBox::Kind::Glyph;
  b.glyph = c;
  b.width = width;
  b.height = height;
  b.depth = depth;
  return b;
}

LayoutBox rule(int width, int thickness) {
  LayoutBox b;
  b.kind = LayoutBox::Kind::Rule;
  b.width = width;
  b.height = thickness;
  return b;
}

LayoutBox space(int width) {
  LayoutBox b;
  b.width = width;
  return b;
}

// Adds a child and grows the parent to contain it.
void place(LayoutBox& parent, LayoutBox child, int dx, int shift) {
  parent.width = std::max(parent.width, dx + child.width);
  parent.height = std::max(parent.height, shift + child.height);
  parent.depth = std::max(parent.depth, child.depth - shift);
  parent.children.push_back({dx, shift, std::move(child)});
}

class Row {
 public:
  Row& add(LayoutBox b, int shift = 0) {
    const int w = b.width;
    place(box_, std::move(b), x_, shift);
    x_ += w;
    box_.width = std::max(box_.width, x_);
    return *this;
  }
  Row& gap(int w) { return add(space(w)); }
  LayoutBox done() { return std::move(box_); }

 private:
  LayoutBox box_;
  int x_ = 0;
};

LayoutBox text(const std::string& s, int size) {
  Row r;
  for (char c : s) r.add(glyph(static_cast<unsigned char>(c), size));
  return r.done();
}

const LayoutBox* leftmost_glyph(const LayoutBox& b) {
  if (b.kind != LayoutBox::Kind::List) return &b;
  for (const auto& c : b.children) {
    if (c.box.kind == LayoutBox::Kind::List && c.box.children.empty()) continue;
    return leftmost_glyph(c.box);
  }
  return nullptr;
}

bool is_atom(const Expr& e) {
  return e.is<node::Const>() || e.is<node::DecimalConst>() || e.is<node::Var>();
}

const char* trig_name(TrigKind k) {
  switch (k) {
    case TrigKind::Sin: return "sin";
    case TrigKind::Cos: return "cos";
    case TrigKind::Tan: return "tan";
  }
  return "";
}

char32_t relation_glyph(RelOp op) {
  switch (op) {
    case RelOp::Eq: return U'=';
    case RelOp::Gt: return U'>';
    case RelOp::Lt: return U'<';
    case RelOp::Ge: return U'≥';
    case RelOp::Le: return U'≤';
  }
  return U'=';
}

class Layouter {
 public:
  LayoutBox build(const Expr& e, int s) {
    if (const auto* x = e.get_if<node::Const>()) return text(std::to_string(x->value), s);
    if (const auto* x = e.get_if<node::DecimalConst>()) {
      return text(std::to_string(x->integer_part) + "." + x->fraction_digits, s);
    }
    if (const auto* x = e.get_if<node::Var>()) return glyph(static_cast<char32_t>(to_char(x->name)), s);
    if (const auto* x = e.get_if<node::Neg>()) {
      return Row().add(glyph(U'-', s)).add(wrapped(x->operand, s)).done();
    }
    if (const auto* x = e.get_if<node::Add>()) return binary(x->lhs, U'+', x->rhs, s, thin_space(s));
    if (const auto* x = e.get_if<node::Sub>()) return binary(x->lhs, U'-', x->rhs, s, thin_space(s));
    if (const auto* x = e.get_if<node::Mul>()) {
      LayoutBox rhs = x->rhs.is<node::Neg>() ? parens(build(x->rhs, s), s) : build(x->rhs, s);
      Row r;
      r.add(build(x->lhs, s));
      const LayoutBox* first = leftmost_glyph(rhs);
      if (first && first->glyph < 128 && std::isdigit(static_cast<int>(first->glyph))) {
        r.add(glyph(U'·', s));
      }
      return r.add(std::move(rhs)).done();
    }
    if (const auto* x = e.get_if<node::Frac>()) return fraction(build(x->numerator, s), build(x->denominator, s), s);
    if (const auto* x = e.get_if<node::Pow>()) {
      return superscript(wrapped(x->base, s), build(x->exponent, script_size(s)), s);
    }
    if (const auto* x = e.get_if<node::Root>()) return radical(*x, s);
    if (const auto* x = e.get_if<node::Log>()) {
      Row r;
      r.add(text("log", s));
      LayoutBox base = build(x->base, script_size(s));
      const int shift = -(base.height / 2 + 1);
      r.add(std::move(base), shift);
      return r.gap(thin_space(s)).add(wrapped(x->argument, s)).done();
    }
    if (const auto* x = e.get_if<node::Exp>()) {
      return superscript(glyph(U'e', s), build(x->argument, script_size(s)), s);
    }
    if (const auto* x = e.get_if<node::Trig>()) {
      return Row().add(text(trig_name(x->kind), s)).gap(thin_space(s)).add(wrapped(x->argument, s)).done();
    }
    if (const auto* x = e.get_if<node::Integral>()) return integral(x->integrand, x->var, nullptr, nullptr, s);
    if (const auto* x = e.get_if<node::FiniteIntegral>()) {
      return integral(x->integrand, x->var, &x->lower, &x->upper, s);
    }
    if (const auto* x = e.get_if<node::Derivative>()) {
      LayoutBox d = fraction(glyph(U'd', s),
                             Row().add(glyph(U'd', s)).add(glyph(static_cast<char32_t>(to_char(x->var)), s)).done(), s);
      return Row().add(std::move(d)).gap(thin_space(s)).add(wrapped(x->body, s)).done();
    }
    if (const auto* x = e.get_if<node::Limit>()) return limit(*x, s);
    if (const auto* x = e.get_if<node::Relation>()) {
      return binary(x->lhs, relation_glyph(x->op), x->rhs, s, std::max(2, s / 4));
    }
    if (const auto* x = e.get_if<node::System>()) return system(x->first, x->second, s);
    throw std::logic_error("layout: unhandled node");
  }

 private:
  LayoutBox parens(LayoutBox inner, int s) {
    const int h = std::max(inner.height + 1, glyph_height(s));
    const int d = std::max(inner.depth + 1, s - glyph_height(s));
    const int w = std::max(3, glyph_width(s) * 3 / 4);
    return Row().add(stretched(U'(', w, h, d)).add(std::move(inner)).add(stretched(U')', w, h, d)).done();
  }

  LayoutBox wrapped(const Expr& e, int s) {
    LayoutBox b = build(e, s);
    return is_atom(e) ? b : parens(std::move(b), s);
  }

  LayoutBox binary(const Expr& l, char32_t op, const Expr& r, int s, int pad) {
    LayoutBox rhs = r.is<node::Neg>() ? parens(build(r, s), s) : build(r, s);
    return Row().add(build(l, s)).gap(pad).add(glyph(op, s)).gap(pad).add(std::move(rhs)).done();
  }

  LayoutBox fraction(LayoutBox num, LayoutBox den, int s) {
    const int a = axis_height(s);
    const int t = rule_thickness(s);
    const int g = thin_space(s);
    const int w = std::max(num.width, den.width) + 2;
    LayoutBox b;
    const int num_shift = a + t + g + num.depth;
    const int den_shift = a - g - den.height;
    const int num_dx = (w - num.width) / 2;
    const int den_dx = (w - den.width) / 2;
    place(b, std::move(num), num_dx, num_shift);
    place(b, rule(w, t), 0, a);
    place(b, std::move(den), den_dx, den_shift);
    // a little air on both sides so adjacent bars do not merge
    LayoutBox out;
    place(out, std::move(b), 1, 0);
    out.width += 1;
    return out;
  }

  LayoutBox superscript(LayoutBox base, LayoutBox sup, int s) {
    const int shift = std::max(base.height - (sup.height + sup.depth) / 2, (s * 4 + 5) / 10);
    const int base_w = base.width;
    LayoutBox b;
    place(b, std::move(base), 0, 0);
    place(b, std::move(sup), base_w + 1, shift + sup.depth);
    return b;
  }

  LayoutBox radical(const node::Root& r, int s) {
    LayoutBox body = build(r.radicand, s);
    const int t = rule_thickness(s);
    const int g = std::max(1, s / 12);
    const int h = std::max(body.height + g + t, glyph_height(s));
    const int d = std::max(body.depth, s - glyph_height(s));
    Row row;
    const auto* degree = r.degree.get_if<node::Const>();
    if (degree == nullptr || degree->value != 2) {
      LayoutBox deg = build(r.degree, script_size(s));
      const int shift = std::max(0, h - deg.height - deg.depth) / 2 + deg.depth;
      row.add(std::move(deg), shift);
    }
    row.add(stretched(U'√', glyph_width(s), h, d));
    LayoutBox over;
    const int bw = body.width + 1;
    place(over, std::move(body), 1, 0);
    place(over, rule(bw, t), 0, h - t);
    row.add(std::move(over));
    return row.done();
  }

  LayoutBox integral(const Expr& body, Variable v, const Expr* lower, const Expr* upper, int s) {
    LayoutBox inner = build(body, s);
    const int h = std::max(inner.height, glyph_height(s)) + 2;
    const int d = std::max(inner.depth, s - glyph_height(s)) + 2;
    Row row;
    row.add(stretched(U'∫', glyph_width(s), h, d));
    if (lower != nullptr && upper != nullptr) {
      LayoutBox lo = build(*lower, script_size(s));
      LayoutBox hi = build(*upper, script_size(s));
      LayoutBox scripts;
      const int hi_shift = h - hi.height;
      const int lo_shift = -d + lo.depth;
      place(scripts, std::move(hi), 0, hi_shift);
      place(scripts, std::move(lo), 0, lo_shift);
      row.add(std::move(scripts));
    }
    row.gap(thin_space(s)).add(std::move(inner)).gap(thin_space(s));
    row.add(glyph(U'd', s)).add(glyph(static_cast<char32_t>(to_char(v)), s));
    return row.done();
  }

  LayoutBox limit(const node::Limit& l, int s) {
    const int ss = script_size(s);
    LayoutBox lim = text("lim", s);
    Row under;
    under.add(glyph(static_cast<char32_t>(to_char(l.var)), ss)).add(glyph(U'→', ss));
    LayoutBox target = build(l.target, ss);
    if (l.side != LimitSide::Both) {
      target = superscript(std::move(target), glyph(l.side == LimitSide::Left ? U'-' : U'+', script_size(ss)), ss);
    }
    under.add(std::move(target));
    LayoutBox sub = under.done();
    const int w = std::max(lim.width, sub.width);
    LayoutBox op;
    const int lim_dx = (w - lim.width) / 2;
    const int sub_dx = (w - sub.width) / 2;
    const int sub_shift = -(lim.depth + 1 + sub.height);
    place(op, std::move(lim), lim_dx, 0);
    place(op, std::move(sub), sub_dx, sub_shift);
    return Row().add(std::move(op)).gap(thin_space(s)).add(build(l.body, s)).done();
  }

  LayoutBox system(const Expr& first, const Expr& second, int s) {
    LayoutBox a = build(first, s);
    LayoutBox b = build(second, s);
    const int g = std::max(2, s / 3);
    const int total = a.height + a.depth + g + b.height + b.depth;
    const int height = total / 2 + axis_height(s);
    const int depth = total - height;
    LayoutBox rows;
    const int a_shift = height - a.height;
    const int b_shift = height - (a.height + a.depth + g) - b.height;
    place(rows, std::move(a), 0, a_shift);
    place(rows, std::move(b), 0, b_shift);
    return Row().add(stretched(U'{', glyph_width(s), height, depth)).gap(thin_space(s)).add(std::move(rows)).done();
  }
};

// ---- drawing ----

struct Canvas {
  int width;
  int height;
  std::vector<std::uint8_t> ink;

  void set(int x, int y) {
    if (x >= 0 && y >= 0 && x < width && y < height) ink[static_cast<std::size_t>(y) * width + x] = 1;
  }
};

void draw_glyph(Canvas& cv, const LayoutBox& b, int x0, int top) {
  const auto* rows = font::glyph_rows(b.glyph);
  if (rows == nullptr) throw std::logic_error("font has no glyph for code point " + std::to_string(b.glyph));
  const int H = b.height + b.depth;
  const int W = b.width;
  if (H <= 0 || W <= 0) return;
  for (int r = 0; r < H; ++r) {
    // shrink: any ink in the covered source rows; enlarge: nearest row
    const int r0 = r * font::kRows / H;
    const int r1 = std::max(r0 + 1, ((r + 1) * font::kRows + H - 1) / H);
    for (int c = 0; c < W; ++c) {
      const int c0 = c * font::kCols / W;
      const int c1 = std::max(c0 + 1, ((c + 1) * font::kCols + W - 1) / W);
      bool on = false;
      for (int sr = r0; sr < r1 && sr < font::kRows && !on; ++sr) {
        for (int sc = c0; sc < c1 && sc < font::kCols; ++sc) {
          if ((*rows)[sr][sc] == '#') {
            on = true;
            break;
          }
        }
      }
      if (on) cv.set(x0 + c, top + r);
    }
  }
}

void draw(Canvas& cv, const LayoutBox& b, int x0, int baseline) {
  switch (b.kind) {
    case LayoutBox::Kind::Glyph: draw_glyph(cv, b, x0, baseline - b.height); return;
    case LayoutBox::Kind::Rule:
      for (int y = baseline - b.height; y < baseline + b.depth; ++y) {
        for (int x = x0; x < x0 + b.width; ++x) cv.set(x, y);
      }
      return;
    case LayoutBox::Kind::List:
      for (const auto& c : b.children) draw(cv, c.box, x0 + c.dx, baseline - c.shift);
      return;
  }
}

bool within(const LayoutBox& b) {
  for (const auto& c : b.children) {
    if (c.dx < 0 || c.dx + c.box.width > b.width) return false;
    if (c.shift + c.box.height > b.height) return false;
    if (c.box.depth - c.shift > b.depth) return false;
    if (!within(c.box)) return false;
  }
  return true;
}

}  // namespace

bool font_has_glyph(char32_t c) { return font::glyph_rows(c) != nullptr; }

LayoutBox layout(const Expr& e, int style_size) {
  if (style_size < 8) throw std::invalid_argument("layout: style_size must be >= 8");
  return Layouter().build(e, style_size);
}

bool layout_within_bounds(const LayoutBox& box) { return within(box); }

EqImage rasterize(const LayoutBox& box, int height, int width, int padding) {
  if (height < 16 || width < 16) throw std::invalid_argument("rasterize: target must be at least 16x16");
  if (padding < 0 || 2 * padding >= std::min(height, width)) {
    throw std::invalid_argument("rasterize: bad padding");
  }
  Canvas cv{std::max(1, box.width), std::max(1, box.height + box.depth), {}};
  cv.ink.assign(static_cast<std::size_t>(cv.width) * cv.height, 0);
  draw(cv, box, 0, box.height);

  int x_lo = cv.width, x_hi = -1, y_lo = cv.height, y_hi = -1;
  for (int y = 0; y < cv.height; ++y) {
    for (int x = 0; x < cv.width; ++x) {
      if (cv.ink[static_cast<std::size_t>(y) * cv.width + x]) {
        x_lo = std::min(x_lo, x);
        x_hi = std::max(x_hi, x);
        y_lo = std::min(y_lo, y);
        y_hi = std::max(y_hi, y);
      }
    }
  }

  EqImage img;
  img.height = height;
  img.width = width;
  img.pixels.assign(static_cast<std::size_t>(height) * width, 1.0f);
  if (x_hi < 0) return img;

  const std::int64_t cw = x_hi - x_lo + 1;
  const std::int64_t ch = y_hi - y_lo + 1;
  const std::int64_t aw = width - 2 * padding;
  const std::int64_t ah = height - 2 * padding;
  // shrink ratio num/den >= 1 chosen by the tighter dimension
  std::int64_t num = 1, den = 1;
  if (cw > aw || ch > ah) {
    if (cw * ah >= ch * aw) {
      num = cw;
      den = aw;
    } else {
      num = ch;
      den = ah;
    }
  }
  const std::int64_t ow = std::min(aw, (cw * den + num - 1) / num);
  const std::int64_t oh = std::min(ah, (ch * den + num - 1) / num);
  const std::int64_t ox = (width - ow) / 2;
  const std::int64_t oy = (height - oh) / 2;
  for (std::int64_t r = 0; r < oh; ++r) {
    const std::int64_t sr0 = r * num / den;
    const std::int64_t sr1 = std::min(ch, std::max(sr0 + 1, ((r + 1) * num + den - 1) / den));
    for (std::int64_t c = 0; c < ow; ++c) {
      const std::int64_t sc0 = c * num / den;
      const std::int64_t sc1 = std::min(cw, std::max(sc0 + 1, ((c + 1) * num + den - 1) / den));
      bool on = false;
      for (std::int64_t sr = sr0; sr < sr1 && !on; ++sr) {
        const auto* row = &cv.ink[static_cast<std::size_t>(y_lo + sr) * cv.width + x_lo];
        for (std::int64_t sc = sc0; sc < sc1; ++sc) {
          if (row[sc]) {
            on = true;
            break;
          }
        }
      }
      if (on) img.pixels[static_cast<std::size_t>(oy + r) * width + (ox + c)] = 0.0f;
    }
  }
  return img;
}

EqImage render_equation(const Expr& e, const RenderConfig& config) {
  return rasterize(layout(e, config.style_size), config.height, config.width, config.padding);
}

std::string encode_pgm(const EqImage& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.pixels.size());
  for (float p : img.pixels) {
    const float v = std::clamp(p, 0.0f, 1.0f) * 255.0f + 0.5f;
    out.push_back(static_cast<char>(static_cast<std::uint8_t>(v)));
  }
  return out;
}

void write_pgm(const std::string& path, const EqImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  const std::string bytes = encode_pgm(img);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

EqImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  auto next_token = [&]() {
    std::string tok;
    char c;
    while (f.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(f, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(c);
    }
    return tok;
  };
  if (next_token() != "P5") throw std::runtime_error(path + ": not a binary PGM");
  EqImage img;
  try {
    img.width = std::stoi(next_token());
    img.height = std::stoi(next_token());
    if (std::stoi(next_token()) != 255) throw std::runtime_error(path + ": maxval must be 255");
  } catch (const std::logic_error&) {
    throw std::runtime_error(path + ": malformed PGM header");
  }
  if (img.width <= 0 || img.height <= 0) throw std::runtime_error(path + ": bad dimensions");
  std::string data(static_cast<std::size_t>(img.width) * img.height, '\0');
  f.read(data.data(), static_cast<std::streamsize>(data.size()));
  if (f.gcount() != static_cast<std::streamsize>(data.size())) {
    throw std::runtime_error(path + ": truncated pixel data");
  }
  img.pixels.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    img.pixels[i] = static_cast<float>(static_cast<std::uint8_t>(data[i])) / 255.0f;
  }
  return img;
}

}  // namespace eqd
