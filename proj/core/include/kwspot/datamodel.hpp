#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kwspot/geometry.hpp"
#include "kwspot/image.hpp"

namespace kwspot {

// Transcriptions are UTF-8 strings of private-use codepoints U+E000 + id,
// one per glyph. UTF-8 self-synchronization makes byte-level substring
// search equivalent to glyph-level subsequence search.
std::string glyphs_to_text(const std::vector<int>& glyph_ids);
std::vector<int> text_to_glyphs(const std::string& text);

// Ordered keyword list. Class index k in 1..K maps to entries[k-1];
// class 0 is reserved for background.
struct KeywordVocab {
  std::vector<std::string> entries;

  int size() const { return int(entries.size()); }
  const std::string& keyword(int class_id) const;
  // Throws VocabError unless entries are unique, non-empty, 2-4 glyphs each.
  void validate() const;
};

KeywordVocab load_vocab(const std::string& path);
void save_vocab(const KeywordVocab& vocab, const std::string& path);

enum class Orientation { horizontal, oriented, vertical };

const char* to_string(Orientation o);
Orientation orientation_from_string(const std::string& s);

struct TextLineAnno {
  QuadPolygon poly;
  std::string transcription;
  Orientation orientation = Orientation::horizontal;
};

struct KeywordAnno {
  QuadPolygon poly;  // tight (unshrunk) box around the keyword glyphs
  int class_id = 0;  // 1..K
  int parent_line = 0;
};

enum class Origin { synthetic, real };

struct ImageSample {
  std::string image_path;  // relative to the manifest directory
  ImageRGB image;
  std::vector<TextLineAnno> lines;
  // Present iff origin == synthetic (may be an empty list).
  std::optional<std::vector<KeywordAnno>> keywords;
  Origin origin = Origin::synthetic;
};

// Enforces all sample invariants; `record` names the offending manifest
// record in error messages, `vocab_size` < 0 skips class-id range checks.
void validate_sample(const ImageSample& sample, int record, int vocab_size);

// Loads manifest + images; samples come back in manifest order with all
// invariants enforced. Throws SchemaError / InvariantError / IoError.
std::vector<ImageSample> load_dataset(const std::string& manifest_path);

// Writes the manifest and one PNG per sample (paths relative to the
// manifest directory). Deterministic byte output for identical input.
void save_dataset(const std::vector<ImageSample>& samples, const std::string& manifest_path);

// Copy with keyword annotations removed and origin flipped to real.
ImageSample strip_keywords(const ImageSample& sample);

}  // namespace kwspot
