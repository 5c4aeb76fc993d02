#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "kwspot/datamodel.hpp"
#include "kwspot/geometry.hpp"

namespace kwspot {

// 64 procedural glyph bitmaps standing in for a character set with no
// inter-word blanks. Glyphs are compositions of strokes from a shared bank,
// so distinct glyphs can still share local structure.
struct GlyphAtlas {
  static constexpr int kCount = 64;
  static constexpr int kSize = 24;

  // kCount bitmaps, each kSize * kSize, row-major 0/1.
  std::vector<std::vector<uint8_t>> glyphs;

  int coverage(int id) const;                 // ink cell count
  int hamming(int a, int b) const;            // cell-wise distance
  void validate() const;                      // throws AtlasGenerationError
};

// Deterministic for a fixed seed. Regenerates glyphs until the atlas
// invariants hold (coverage in [8%, 60%], pairwise Hamming >= 20, ink
// reaching within 1 px of every cell border), bounded by 10000 attempts.
GlyphAtlas build_atlas(uint64_t seed);

enum class BackgroundKind { flat, gradient, noise };

struct SynthConfig {
  // Image size range (pixels).
  int min_image_h = 128, max_image_h = 160;
  int min_image_w = 128, max_image_w = 160;
  // Lines per image.
  int min_lines = 1, max_lines = 3;
  // Line length in glyphs.
  int min_line_glyphs = 2, max_line_glyphs = 6;
  // Orientation mix; must sum to 1.
  double p_horizontal = 0.6;
  double p_oriented = 0.25;
  double p_vertical = 0.15;
  double oriented_max_deg = 60.0;  // oriented theta ~ U(-max, max)
  // Glyph size range (pixels).
  double min_glyph_size = 14.0, max_glyph_size = 26.0;
  // Probability that a line has a keyword spliced into it.
  double keyword_rate = 0.5;
  // Style.
  std::vector<BackgroundKind> backgrounds{BackgroundKind::flat, BackgroundKind::gradient,
                                          BackgroundKind::noise};
  double min_opacity = 0.75, max_opacity = 1.0;
  double min_blur_sigma = 0.0, max_blur_sigma = 1.5;
  double color_jitter = 12.0;  // per-channel text color perturbation, 0-255 scale
  double pixel_noise = 0.0;    // per-pixel additive noise amplitude, 0-255 scale
  // Seeds.
  uint64_t seed = 0;
  uint64_t atlas_seed = 0;

  void validate() const;  // throws ConfigError
};

SynthConfig load_synth_config(const std::string& path);
void save_synth_config(const SynthConfig& cfg, const std::string& path);

// A text line rendered in its own raster. Quads are in raster coordinates;
// line_quad is the glyph-cell layout box (ink stays within 1 px of it).
struct RenderedLine {
  int h = 0, w = 0;
  std::vector<float> alpha;  // h * w ink opacity in [0, 1]
  QuadPolygon line_quad;
  std::vector<QuadPolygon> glyph_quads;
};

// Lays out glyphs left-to-right (horizontal), top-to-bottom (vertical), or
// as a horizontal line rotated by theta_rad about its center (oriented).
RenderedLine render_line(const GlyphAtlas& atlas, const std::vector<int>& glyph_ids,
                         Orientation orientation, double glyph_size, double theta_rad);

// Renders `count` annotated samples. Sample i depends only on
// (config, vocab, i), so sharding by index is deterministic. Samples whose
// lines cannot be placed are skipped and logged to `log` when non-null.
std::vector<ImageSample> synthesize(const SynthConfig& cfg, const KeywordVocab& vocab,
                                    int count, std::ostream* log = nullptr);

// K distinct random keywords of 2-4 glyphs over the atlas alphabet.
KeywordVocab make_random_vocab(int k, uint64_t seed);

}  // namespace kwspot
