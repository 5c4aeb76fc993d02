#include "kwspot/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>
#include <fstream>

#include "kwspot/errors.hpp"
#include "kwspot/rng.hpp"

using json = nlohmann::json;

namespace kwspot {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kS = GlyphAtlas::kSize;

// ---- glyph strokes ---------------------------------------------------------

using Bitmap = std::vector<uint8_t>;

void fill_rect(Bitmap& bm, int r0, int c0, int r1, int c1) {
  r0 = std::clamp(r0, 0, kS - 1);
  r1 = std::clamp(r1, 0, kS - 1);
  c0 = std::clamp(c0, 0, kS - 1);
  c1 = std::clamp(c1, 0, kS - 1);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) bm[size_t(r) * kS + c] = 1;
}

void stroke_diagonal(Bitmap& bm, Rng& rng) {
  int r0 = rng.uniform_int(2, kS - 3), c0 = rng.uniform_int(2, kS - 3);
  int r1 = rng.uniform_int(2, kS - 3), c1 = rng.uniform_int(2, kS - 3);
  int steps = std::max(std::abs(r1 - r0), std::abs(c1 - c0));
  if (steps < 8) return;
  for (int t = 0; t <= steps; ++t) {
    int r = r0 + (r1 - r0) * t / steps;
    int c = c0 + (c1 - c0) * t / steps;
    fill_rect(bm, r, c, r + 1, c + 1);
  }
}

void stroke_box(Bitmap& bm, Rng& rng) {
  int r0 = rng.uniform_int(1, kS - 10), c0 = rng.uniform_int(1, kS - 10);
  int r1 = r0 + rng.uniform_int(6, 9), c1 = c0 + rng.uniform_int(6, 9);
  fill_rect(bm, r0, c0, r0 + 1, c1);
  fill_rect(bm, r1 - 1, c0, r1, c1);
  fill_rect(bm, r0, c0, r1, c0 + 1);
  fill_rect(bm, r0, c1 - 1, r1, c1);
}

Bitmap compose_glyph(Rng& rng) {
  Bitmap bm(size_t(kS) * kS, 0);
  // Two anchor bars keep ink reaching every cell border.
  int hr = rng.uniform_int(0, kS - 3);
  fill_rect(bm, hr, 0, hr + rng.uniform_int(1, 2), kS - 1);
  int vc = rng.uniform_int(0, kS - 3);
  fill_rect(bm, 0, vc, kS - 1, vc + rng.uniform_int(1, 2));
  int extras = rng.uniform_int(0, 2);
  for (int e = 0; e < extras; ++e) {
    switch (rng.uniform_int(0, 3)) {
      case 0: {  // partial horizontal bar
        int r = rng.uniform_int(1, kS - 3);
        int c0 = rng.uniform_int(0, kS / 2);
        fill_rect(bm, r, c0, r + 1, c0 + rng.uniform_int(6, kS - 1 - c0));
        break;
      }
      case 1: {  // partial vertical bar
        int c = rng.uniform_int(1, kS - 3);
        int r0 = rng.uniform_int(0, kS / 2);
        fill_rect(bm, r0, c, r0 + rng.uniform_int(6, kS - 1 - r0), c + 1);
        break;
      }
      case 2:
        stroke_diagonal(bm, rng);
        break;
      default:
        stroke_box(bm, rng);
        break;
    }
  }
  return bm;
}

bool glyph_ok(const Bitmap& bm) {
  int ink = 0, rmin = kS, rmax = -1, cmin = kS, cmax = -1;
  for (int r = 0; r < kS; ++r)
    for (int c = 0; c < kS; ++c)
      if (bm[size_t(r) * kS + c]) {
        ++ink;
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
        cmin = std::min(cmin, c);
        cmax = std::max(cmax, c);
      }
  int cells = kS * kS;
  if (ink * 100 < cells * 8 || ink * 100 > cells * 60) return false;
  return rmin <= 1 && cmin <= 1 && rmax >= kS - 2 && cmax >= kS - 2;
}

int bitmap_hamming(const Bitmap& a, const Bitmap& b) {
  int d = 0;
  for (size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

float sample_bitmap(const Bitmap& bm, double gx, double gy) {
  double fx = gx - 0.5, fy = gy - 0.5;
  int x0 = int(std::floor(fx)), y0 = int(std::floor(fy));
  double ax = fx - x0, ay = fy - y0;
  auto texel = [&](int x, int y) -> double {
    x = std::clamp(x, 0, kS - 1);
    y = std::clamp(y, 0, kS - 1);
    return bm[size_t(y) * kS + x];
  };
  double top = texel(x0, y0) * (1 - ax) + texel(x0 + 1, y0) * ax;
  double bot = texel(x0, y0 + 1) * (1 - ax) + texel(x0 + 1, y0 + 1) * ax;
  return float(top * (1 - ay) + bot * ay);
}

// ---- backgrounds ------------------------------------------------------------

struct FloatImage {
  int h = 0, w = 0;
  std::vector<float> px;  // h*w*3, 0..255 scale
  float& at(int r, int c, int ch) { return px[(size_t(r) * w + c) * 3 + ch]; }
  float at(int r, int c, int ch) const { return px[(size_t(r) * w + c) * 3 + ch]; }
};

void paint_background(FloatImage& img, BackgroundKind kind, Rng& rng) {
  auto color = [&] {
    return std::array<double, 3>{rng.uniform(0, 255), rng.uniform(0, 255), rng.uniform(0, 255)};
  };
  switch (kind) {
    case BackgroundKind::flat: {
      auto c = color();
      for (int r = 0; r < img.h; ++r)
        for (int x = 0; x < img.w; ++x)
          for (int ch = 0; ch < 3; ++ch) img.at(r, x, ch) = float(c[ch]);
      break;
    }
    case BackgroundKind::gradient: {
      auto c0 = color(), c1 = color();
      double ang = rng.uniform(0, kPi);
      double dx = std::cos(ang), dy = std::sin(ang);
      double lo = 1e300, hi = -1e300;
      for (int r : {0, img.h - 1})
        for (int x : {0, img.w - 1}) {
          double p = x * dx + r * dy;
          lo = std::min(lo, p);
          hi = std::max(hi, p);
        }
      double span = std::max(1e-9, hi - lo);
      for (int r = 0; r < img.h; ++r)
        for (int x = 0; x < img.w; ++x) {
          double t = (x * dx + r * dy - lo) / span;
          for (int ch = 0; ch < 3; ++ch)
            img.at(r, x, ch) = float(c0[ch] + (c1[ch] - c0[ch]) * t);
        }
      break;
    }
    case BackgroundKind::noise: {
      auto c0 = color(), c1 = color();
      int cell = rng.uniform_int(8, 24);
      int gh = img.h / cell + 2, gw = img.w / cell + 2;
      std::vector<double> node(size_t(gh) * gw);
      for (double& v : node) v = rng.uniform();
      for (int r = 0; r < img.h; ++r)
        for (int x = 0; x < img.w; ++x) {
          double gy = double(r) / cell, gx = double(x) / cell;
          int y0 = int(gy), x0 = int(gx);
          double ay = gy - y0, ax = gx - x0;
          auto n = [&](int yy, int xx) { return node[size_t(yy) * gw + xx]; };
          double v = n(y0, x0) * (1 - ax) * (1 - ay) + n(y0, x0 + 1) * ax * (1 - ay) +
                     n(y0 + 1, x0) * (1 - ax) * ay + n(y0 + 1, x0 + 1) * ax * ay;
          for (int ch = 0; ch < 3; ++ch)
            img.at(r, x, ch) = float(c0[ch] + (c1[ch] - c0[ch]) * v);
        }
      break;
    }
  }
}

void gaussian_blur(FloatImage& img, double sigma) {
  if (sigma < 0.05) return;
  int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> k(size_t(radius) + 1);
  double sum = 0;
  for (int i = 0; i <= radius; ++i) {
    k[i] = std::exp(-0.5 * (double(i) * i) / (sigma * sigma));
    sum += i == 0 ? k[i] : 2 * k[i];
  }
  for (double& v : k) v /= sum;

  FloatImage tmp = img;
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        double acc = k[0] * img.at(r, c, ch);
        for (int i = 1; i <= radius; ++i) {
          acc += k[i] * img.at(r, std::clamp(c - i, 0, img.w - 1), ch);
          acc += k[i] * img.at(r, std::clamp(c + i, 0, img.w - 1), ch);
        }
        tmp.at(r, c, ch) = float(acc);
      }
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        double acc = k[0] * tmp.at(r, c, ch);
        for (int i = 1; i <= radius; ++i) {
          acc += k[i] * tmp.at(std::clamp(r - i, 0, img.h - 1), c, ch);
          acc += k[i] * tmp.at(std::clamp(r + i, 0, img.h - 1), c, ch);
        }
        img.at(r, c, ch) = float(acc);
      }
}

double quad_iou(const QuadPolygon& a, const QuadPolygon& b) {
  double inter = convex_quad_intersection_area(a, b);
  double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace

// ---- atlas -----------------------------------------------------------------

int GlyphAtlas::coverage(int id) const {
  int n = 0;
  for (uint8_t c : glyphs[size_t(id)]) n += c;
  return n;
}

int GlyphAtlas::hamming(int a, int b) const {
  return bitmap_hamming(glyphs[size_t(a)], glyphs[size_t(b)]);
}

void GlyphAtlas::validate() const {
  if (int(glyphs.size()) != kCount)
    throw AtlasGenerationError("atlas must hold exactly 64 glyphs");
  int cells = kSize * kSize;
  for (int i = 0; i < kCount; ++i) {
    int ink = coverage(i);
    if (ink * 100 < cells * 8 || ink * 100 > cells * 60)
      throw AtlasGenerationError("glyph " + std::to_string(i) + " ink coverage out of range");
  }
  for (int i = 0; i < kCount; ++i)
    for (int j = i + 1; j < kCount; ++j)
      if (hamming(i, j) < 20)
        throw AtlasGenerationError("glyphs " + std::to_string(i) + " and " +
                                   std::to_string(j) + " are too similar");
}

GlyphAtlas build_atlas(uint64_t seed) {
  Rng rng(derive_seed(seed, 0x61746c61));  // "atla"
  GlyphAtlas atlas;
  atlas.glyphs.reserve(GlyphAtlas::kCount);
  int attempts = 0;
  while (int(atlas.glyphs.size()) < GlyphAtlas::kCount) {
    if (++attempts > 10000)
      throw AtlasGenerationError("atlas invariants unsatisfied after 10000 attempts");
    Bitmap bm = compose_glyph(rng);
    if (!glyph_ok(bm)) continue;
    bool distinct = true;
    for (const Bitmap& other : atlas.glyphs)
      if (bitmap_hamming(bm, other) < 20) {
        distinct = false;
        break;
      }
    if (distinct) atlas.glyphs.push_back(std::move(bm));
  }
  atlas.validate();
  return atlas;
}

// ---- config ----------------------------------------------------------------

void SynthConfig::validate() const {
  auto range_ok = [](double lo, double hi) { return lo <= hi; };
  if (!range_ok(min_image_h, max_image_h) || !range_ok(min_image_w, max_image_w) ||
      !range_ok(min_lines, max_lines) || !range_ok(min_line_glyphs, max_line_glyphs) ||
      !range_ok(min_glyph_size, max_glyph_size) || !range_ok(min_opacity, max_opacity) ||
      !range_ok(min_blur_sigma, max_blur_sigma))
    throw ConfigError("empty range in synth config");
  if (min_image_h < 32 || min_image_w < 32) throw ConfigError("image size too small");
  if (min_lines < 0 || min_line_glyphs < 1) throw ConfigError("bad line counts");
  if (min_glyph_size < 6.0) throw ConfigError("glyph size too small");
  double psum = p_horizontal + p_oriented + p_vertical;
  if (p_horizontal < 0 || p_oriented < 0 || p_vertical < 0 || std::abs(psum - 1.0) > 1e-9)
    throw ConfigError("orientation mix must be non-negative and sum to 1");
  if (keyword_rate < 0 || keyword_rate > 1) throw ConfigError("keyword_rate outside [0, 1]");
  if (min_opacity < 0 || max_opacity > 1) throw ConfigError("opacity outside [0, 1]");
  if (min_blur_sigma < 0) throw ConfigError("negative blur sigma");
  if (backgrounds.empty()) throw ConfigError("no background kinds enabled");
}

namespace {

const char* bg_name(BackgroundKind k) {
  switch (k) {
    case BackgroundKind::flat: return "flat";
    case BackgroundKind::gradient: return "gradient";
    case BackgroundKind::noise: return "noise";
  }
  return "flat";
}

BackgroundKind bg_from_name(const std::string& s) {
  if (s == "flat") return BackgroundKind::flat;
  if (s == "gradient") return BackgroundKind::gradient;
  if (s == "noise") return BackgroundKind::noise;
  throw ConfigError("unknown background kind: " + s);
}

}  // namespace

SynthConfig load_synth_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open synth config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synth config parse: ") + e.what());
  }
  SynthConfig cfg;
  auto pair = [&](const char* key, auto& lo, auto& hi) {
    if (!j.contains(key)) return;
    lo = j[key][0];
    hi = j[key][1];
  };
  pair("image_h", cfg.min_image_h, cfg.max_image_h);
  pair("image_w", cfg.min_image_w, cfg.max_image_w);
  pair("lines", cfg.min_lines, cfg.max_lines);
  pair("line_glyphs", cfg.min_line_glyphs, cfg.max_line_glyphs);
  pair("glyph_size", cfg.min_glyph_size, cfg.max_glyph_size);
  pair("opacity", cfg.min_opacity, cfg.max_opacity);
  pair("blur_sigma", cfg.min_blur_sigma, cfg.max_blur_sigma);
  if (j.contains("orientation_mix")) {
    cfg.p_horizontal = j["orientation_mix"].value("horizontal", 0.0);
    cfg.p_oriented = j["orientation_mix"].value("oriented", 0.0);
    cfg.p_vertical = j["orientation_mix"].value("vertical", 0.0);
  }
  cfg.oriented_max_deg = j.value("oriented_max_deg", cfg.oriented_max_deg);
  cfg.keyword_rate = j.value("keyword_rate", cfg.keyword_rate);
  cfg.color_jitter = j.value("color_jitter", cfg.color_jitter);
  cfg.pixel_noise = j.value("pixel_noise", cfg.pixel_noise);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.atlas_seed = j.value("atlas_seed", cfg.atlas_seed);
  if (j.contains("backgrounds")) {
    cfg.backgrounds.clear();
    for (const json& b : j["backgrounds"]) cfg.backgrounds.push_back(bg_from_name(b));
  }
  cfg.validate();
  return cfg;
}

void save_synth_config(const SynthConfig& cfg, const std::string& path) {
  json j;
  j["image_h"] = {cfg.min_image_h, cfg.max_image_h};
  j["image_w"] = {cfg.min_image_w, cfg.max_image_w};
  j["lines"] = {cfg.min_lines, cfg.max_lines};
  j["line_glyphs"] = {cfg.min_line_glyphs, cfg.max_line_glyphs};
  j["glyph_size"] = {cfg.min_glyph_size, cfg.max_glyph_size};
  j["opacity"] = {cfg.min_opacity, cfg.max_opacity};
  j["blur_sigma"] = {cfg.min_blur_sigma, cfg.max_blur_sigma};
  j["orientation_mix"] = {{"horizontal", cfg.p_horizontal},
                          {"oriented", cfg.p_oriented},
                          {"vertical", cfg.p_vertical}};
  j["oriented_max_deg"] = cfg.oriented_max_deg;
  j["keyword_rate"] = cfg.keyword_rate;
  j["color_jitter"] = cfg.color_jitter;
  j["pixel_noise"] = cfg.pixel_noise;
  j["seed"] = cfg.seed;
  j["atlas_seed"] = cfg.atlas_seed;
  json bgs = json::array();
  for (BackgroundKind b : cfg.backgrounds) bgs.push_back(bg_name(b));
  j["backgrounds"] = bgs;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write synth config " + path);
  out << j.dump(2) << "\n";
}

// ---- rendering --------------------------------------------------------------

RenderedLine render_line(const GlyphAtlas& atlas, const std::vector<int>& glyph_ids,
                         Orientation orientation, double glyph_size, double theta_rad) {
  if (glyph_ids.empty()) throw InvariantError("render_line needs at least one glyph");
  for (int id : glyph_ids)
    if (id < 0 || id >= GlyphAtlas::kCount)
      throw VocabError("glyph id outside atlas: " + std::to_string(id));

  const int n = int(glyph_ids.size());
  const double s = glyph_size;
  const bool vertical = orientation == Orientation::vertical;
  const double theta = orientation == Orientation::oriented ? theta_rad : 0.0;
  const double lx = vertical ? s : n * s;  // layout box extents
  const double ly = vertical ? n * s : s;
  const Vec2 cl{lx * 0.5, ly * 0.5};
  const double ct = std::cos(theta), st = std::sin(theta);

  auto to_world = [&](Vec2 p) -> Vec2 {
    Vec2 d = p - cl;
    return {cl.x + d.x * ct - d.y * st, cl.y + d.x * st + d.y * ct};
  };

  Vec2 lo{1e300, 1e300}, hi{-1e300, -1e300};
  for (Vec2 corner : {Vec2{0, 0}, Vec2{lx, 0}, Vec2{lx, ly}, Vec2{0, ly}}) {
    Vec2 p = to_world(corner);
    lo.x = std::min(lo.x, p.x);
    lo.y = std::min(lo.y, p.y);
    hi.x = std::max(hi.x, p.x);
    hi.y = std::max(hi.y, p.y);
  }
  const Vec2 shift{1.0 - lo.x, 1.0 - lo.y};

  RenderedLine rl;
  rl.w = int(std::ceil(hi.x - lo.x)) + 2;
  rl.h = int(std::ceil(hi.y - lo.y)) + 2;
  rl.alpha.assign(size_t(rl.h) * rl.w, 0.f);

  auto map_pt = [&](Vec2 p) { return to_world(p) + shift; };

  for (int i = 0; i < n; ++i) {
    Vec2 a = vertical ? Vec2{0, i * s} : Vec2{i * s, 0};
    Vec2 b = vertical ? Vec2{s, i * s} : Vec2{(i + 1) * s, 0};
    Vec2 c = vertical ? Vec2{s, (i + 1) * s} : Vec2{(i + 1) * s, s};
    Vec2 d = vertical ? Vec2{0, (i + 1) * s} : Vec2{i * s, s};
    rl.glyph_quads.push_back(QuadPolygon{{map_pt(a), map_pt(b), map_pt(c), map_pt(d)}});
  }
  rl.line_quad =
      QuadPolygon{{map_pt({0, 0}), map_pt({lx, 0}), map_pt({lx, ly}), map_pt({0, ly})}};

  // Inverse map each raster pixel into layout space and sample its glyph.
  for (int y = 0; y < rl.h; ++y) {
    for (int x = 0; x < rl.w; ++x) {
      Vec2 q{x + 0.5 - shift.x, y + 0.5 - shift.y};
      Vec2 d = q - cl;
      Vec2 l{cl.x + d.x * ct + d.y * st, cl.y - d.x * st + d.y * ct};
      if (l.x < 0 || l.x >= lx || l.y < 0 || l.y >= ly) continue;
      double along = vertical ? l.y : l.x;
      double across = vertical ? l.x : l.y;
      int gi = std::min(n - 1, int(along / s));
      double u = (along - gi * s) / s * kS;
      double v = across / s * kS;
      const Bitmap& bm = atlas.glyphs[size_t(glyph_ids[size_t(gi)])];
      rl.alpha[size_t(y) * rl.w + x] = vertical ? sample_bitmap(bm, v, u)
                                                : sample_bitmap(bm, u, v);
    }
  }
  return rl;
}

// ---- synthesis --------------------------------------------------------------

namespace {

struct PlacedLine {
  RenderedLine rl;
  std::vector<int> glyph_ids;
  Orientation orientation;
  Vec2 offset;  // raster -> image translation
};

QuadPolygon span_union_quad(const PlacedLine& pl, int start, int len) {
  const QuadPolygon& first = pl.rl.glyph_quads[size_t(start)];
  const QuadPolygon& last = pl.rl.glyph_quads[size_t(start + len - 1)];
  // Cell quads are ordered (tl, tr, br, bl) in layout space, so the union of
  // a contiguous run takes the leading edge of the first cell and the
  // trailing edge of the last.
  QuadPolygon q;
  if (pl.orientation == Orientation::vertical)
    q = QuadPolygon{{first.v[0], first.v[1], last.v[2], last.v[3]}};
  else
    q = QuadPolygon{{first.v[0], last.v[1], last.v[2], first.v[3]}};
  return q.translated(pl.offset);
}

}  // namespace

KeywordVocab make_random_vocab(int k, uint64_t seed) {
  if (k < 1) throw VocabError("vocabulary size must be >= 1");
  Rng rng(derive_seed(seed, 0x766f6361));  // "voca"
  std::set<std::string> seen;
  KeywordVocab vocab;
  int guard = 0;
  while (int(vocab.entries.size()) < k) {
    if (++guard > 100000) throw VocabError("could not draw distinct keywords");
    int len = rng.uniform_int(2, 4);
    std::vector<int> ids;
    for (int i = 0; i < len; ++i) ids.push_back(rng.uniform_int(0, GlyphAtlas::kCount - 1));
    std::string kw = glyphs_to_text(ids);
    if (seen.insert(kw).second) vocab.entries.push_back(kw);
  }
  vocab.validate();
  return vocab;
}

std::vector<ImageSample> synthesize(const SynthConfig& cfg, const KeywordVocab& vocab,
                                    int count, std::ostream* log) {
  cfg.validate();
  vocab.validate();
  std::vector<std::vector<int>> kw_ids;
  for (const std::string& kw : vocab.entries) {
    kw_ids.push_back(text_to_glyphs(kw));
    for (int id : kw_ids.back())
      if (id < 0 || id >= GlyphAtlas::kCount)
        throw VocabError("vocabulary keyword uses glyph outside the atlas");
  }
  GlyphAtlas atlas = build_atlas(cfg.atlas_seed);

  std::vector<ImageSample> out;
  out.reserve(size_t(count));

  for (int idx = 0; idx < count; ++idx) {
    Rng rng(derive_seed(cfg.seed, uint64_t(idx)));
    int h = rng.uniform_int(cfg.min_image_h, cfg.max_image_h);
    int w = rng.uniform_int(cfg.min_image_w, cfg.max_image_w);

    FloatImage img;
    img.h = h;
    img.w = w;
    img.px.assign(size_t(h) * w * 3, 0.f);
    BackgroundKind bg = cfg.backgrounds[rng.uniform_int(uint64_t(cfg.backgrounds.size()))];
    paint_background(img, bg, rng);

    int n_lines = rng.uniform_int(cfg.min_lines, cfg.max_lines);
    std::vector<PlacedLine> placed;
    bool failed = false;

    for (int li = 0; li < n_lines; ++li) {
      bool ok = false;
      for (int attempt = 0; attempt < 40 && !ok; ++attempt) {
        double pick = rng.uniform();
        Orientation ori = pick < cfg.p_horizontal ? Orientation::horizontal
                          : pick < cfg.p_horizontal + cfg.p_oriented ? Orientation::oriented
                                                                     : Orientation::vertical;
        double theta = ori == Orientation::oriented
                           ? rng.uniform(-cfg.oriented_max_deg, cfg.oriented_max_deg) * kPi / 180.0
                           : 0.0;
        double size = rng.uniform(cfg.min_glyph_size, cfg.max_glyph_size);
        int n = rng.uniform_int(cfg.min_line_glyphs, cfg.max_line_glyphs);

        std::vector<int> ids(static_cast<size_t>(n), 0);
        for (int& id : ids) id = rng.uniform_int(0, GlyphAtlas::kCount - 1);
        if (rng.bernoulli(cfg.keyword_rate)) {
          const std::vector<int>& kw = kw_ids[rng.uniform_int(uint64_t(kw_ids.size()))];
          if (int(kw.size()) > n) {
            n = int(kw.size());
            ids = kw;
          } else {
            int pos = rng.uniform_int(0, n - int(kw.size()));
            std::copy(kw.begin(), kw.end(), ids.begin() + pos);
          }
        }

        RenderedLine rl = render_line(atlas, ids, ori, size, theta);
        if (rl.w + 4 > w || rl.h + 4 > h) continue;
        Vec2 offset{double(rng.uniform_int(2, w - rl.w - 2)),
                    double(rng.uniform_int(2, h - rl.h - 2))};
        QuadPolygon quad = rl.line_quad.translated(offset);
        bool overlaps = false;
        for (const PlacedLine& other : placed)
          if (quad_iou(quad, other.rl.line_quad.translated(other.offset)) > 0.005) {
            overlaps = true;
            break;
          }
        if (overlaps) continue;
        placed.push_back(PlacedLine{std::move(rl), std::move(ids), ori, offset});
        ok = true;
      }
      if (!ok) {
        failed = true;
        break;
      }
    }
    if (failed) {
      if (log)
        *log << "synthesize: sample " << idx << " skipped (could not place "
             << n_lines << " lines on " << w << "x" << h << ")\n";
      continue;
    }

    // Composite lines over the background.
    for (const PlacedLine& pl : placed) {
      Vec2 lo, hi;
      pl.rl.line_quad.translated(pl.offset).aabb(lo, hi);
      int r0 = std::clamp(int(lo.y), 0, h - 1), r1 = std::clamp(int(hi.y) + 1, 0, h - 1);
      int c0 = std::clamp(int(lo.x), 0, w - 1), c1 = std::clamp(int(hi.x) + 1, 0, w - 1);
      double mean[3] = {0, 0, 0};
      int cnt = 0;
      for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c, ++cnt)
          for (int ch = 0; ch < 3; ++ch) mean[ch] += img.at(r, c, ch);
      for (double& m : mean) m /= std::max(1, cnt);

      double color[3];
      for (int tries = 0; tries < 64; ++tries) {
        double cand[3] = {rng.uniform(0, 255), rng.uniform(0, 255), rng.uniform(0, 255)};
        double dist = (std::abs(cand[0] - mean[0]) + std::abs(cand[1] - mean[1]) +
                       std::abs(cand[2] - mean[2])) / 3.0;
        std::copy(cand, cand + 3, color);
        if (dist >= 40.0) break;
      }
      double opacity = rng.uniform(cfg.min_opacity, cfg.max_opacity);
      std::vector<std::array<double, 3>> glyph_color(pl.glyph_ids.size());
      for (auto& gc : glyph_color)
        for (int ch = 0; ch < 3; ++ch)
          gc[size_t(ch)] = std::clamp(
              color[ch] + rng.uniform(-cfg.color_jitter, cfg.color_jitter), 0.0, 255.0);

      for (int y = 0; y < pl.rl.h; ++y) {
        int r = y + int(pl.offset.y);
        if (r < 0 || r >= h) continue;
        for (int x = 0; x < pl.rl.w; ++x) {
          int c = x + int(pl.offset.x);
          if (c < 0 || c >= w) continue;
          float a = pl.rl.alpha[size_t(y) * pl.rl.w + x];
          if (a <= 0.f) continue;
          // Color by the glyph cell this pixel center falls in.
          Vec2 p{c + 0.5 - pl.offset.x, r + 0.5 - pl.offset.y};
          int gi = 0;
          for (int k = int(pl.rl.glyph_quads.size()) - 1; k >= 0; --k)
            if (point_in_polygon(p, pl.rl.glyph_quads[size_t(k)])) {
              gi = k;
              break;
            }
          double wgt = double(a) * opacity;
          for (int ch = 0; ch < 3; ++ch)
            img.at(r, c, ch) =
                float(img.at(r, c, ch) * (1.0 - wgt) + glyph_color[size_t(gi)][size_t(ch)] * wgt);
        }
      }
    }

    gaussian_blur(img, rng.uniform(cfg.min_blur_sigma, cfg.max_blur_sigma));
    if (cfg.pixel_noise > 0)
      for (float& v : img.px) v += float(rng.uniform(-cfg.pixel_noise, cfg.pixel_noise));

    ImageSample s;
    char buf[40];
    std::snprintf(buf, sizeof(buf), "images/sample_%06d.png", idx);
    s.image_path = buf;
    s.origin = Origin::synthetic;
    s.image.h = h;
    s.image.w = w;
    s.image.data.resize(size_t(h) * w * 3);
    for (size_t i = 0; i < s.image.data.size(); ++i)
      s.image.data[i] = uint8_t(std::clamp(std::lround(img.px[i]), 0L, 255L));

    std::vector<KeywordAnno> kws;
    for (size_t li = 0; li < placed.size(); ++li) {
      const PlacedLine& pl = placed[li];
      TextLineAnno anno;
      anno.poly = pl.rl.line_quad.translated(pl.offset);
      anno.transcription = glyphs_to_text(pl.glyph_ids);
      anno.orientation = pl.orientation;
      s.lines.push_back(std::move(anno));

      for (size_t k = 0; k < kw_ids.size(); ++k) {
        const std::vector<int>& kw = kw_ids[k];
        if (kw.size() > pl.glyph_ids.size()) continue;
        for (size_t pos = 0; pos + kw.size() <= pl.glyph_ids.size(); ++pos) {
          if (!std::equal(kw.begin(), kw.end(), pl.glyph_ids.begin() + long(pos))) continue;
          KeywordAnno ka;
          ka.poly = span_union_quad(pl, int(pos), int(kw.size()));
          ka.class_id = int(k) + 1;
          ka.parent_line = int(li);
          kws.push_back(std::move(ka));
        }
      }
    }
    s.keywords = std::move(kws);
    validate_sample(s, idx, vocab.size());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace kwspot
