#include "kwspot/datamodel.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kwspot/errors.hpp"
#include "kwspot/fsutil.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace kwspot {

namespace {

constexpr int kGlyphBase = 0xE000;  // private use area
constexpr double kContainDilationPx = 2.0;

json poly_to_json(const QuadPolygon& q) {
  json arr = json::array();
  for (const Vec2& p : q.v) arr.push_back(json::array({p.x, p.y}));
  return arr;
}

QuadPolygon poly_from_json(const json& arr, int record) {
  if (!arr.is_array() || arr.size() != 4)
    throw SchemaError("record " + std::to_string(record) + ": poly must have 4 vertices");
  QuadPolygon q;
  for (int i = 0; i < 4; ++i) {
    const json& p = arr[i];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      throw SchemaError("record " + std::to_string(record) + ": poly vertex must be [x, y]");
    q.v[i] = {p[0].get<double>(), p[1].get<double>()};
  }
  return q;
}

}  // namespace

std::string glyphs_to_text(const std::vector<int>& glyph_ids) {
  std::string out;
  out.reserve(glyph_ids.size() * 3);
  for (int id : glyph_ids) {
    if (id < 0 || id > 0xF8FF - kGlyphBase)
      throw VocabError("glyph id out of range: " + std::to_string(id));
    int cp = kGlyphBase + id;
    out.push_back(char(0xE0 | (cp >> 12)));
    out.push_back(char(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(char(0x80 | (cp & 0x3F)));
  }
  return out;
}

std::vector<int> text_to_glyphs(const std::string& text) {
  std::vector<int> ids;
  for (size_t i = 0; i < text.size(); i += 3) {
    if (i + 2 >= text.size())
      throw SchemaError("truncated glyph text");
    unsigned b0 = uint8_t(text[i]), b1 = uint8_t(text[i + 1]), b2 = uint8_t(text[i + 2]);
    if ((b0 & 0xF0) != 0xE0 || (b1 & 0xC0) != 0x80 || (b2 & 0xC0) != 0x80)
      throw SchemaError("invalid glyph text encoding");
    int cp = ((b0 & 0x0F) << 12) | ((b1 & 0x3F) << 6) | (b2 & 0x3F);
    if (cp < kGlyphBase) throw SchemaError("codepoint outside glyph block");
    ids.push_back(cp - kGlyphBase);
  }
  return ids;
}

const std::string& KeywordVocab::keyword(int class_id) const {
  if (class_id < 1 || class_id > size())
    throw VocabError("class id " + std::to_string(class_id) + " outside 1.." +
                     std::to_string(size()));
  return entries[size_t(class_id) - 1];
}

void KeywordVocab::validate() const {
  if (entries.empty()) throw VocabError("vocabulary must contain at least one keyword");
  std::set<std::string> seen;
  for (const std::string& kw : entries) {
    if (kw.empty()) throw VocabError("empty keyword");
    size_t n = text_to_glyphs(kw).size();
    if (n < 2 || n > 4)
      throw VocabError("keyword length must be 2-4 glyphs, got " + std::to_string(n));
    if (!seen.insert(kw).second) throw VocabError("duplicate keyword");
  }
}

KeywordVocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw SchemaError("vocabulary " + path + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("keywords") || !j["keywords"].is_array())
    throw SchemaError("vocabulary must be {\"keywords\": [...]}");
  KeywordVocab vocab;
  for (const json& kw : j["keywords"]) {
    if (!kw.is_string()) throw SchemaError("keyword entries must be strings");
    vocab.entries.push_back(kw.get<std::string>());
  }
  vocab.validate();
  return vocab;
}

void save_vocab(const KeywordVocab& vocab, const std::string& path) {
  vocab.validate();
  json j;
  j["keywords"] = vocab.entries;
  write_file_atomic(path, j.dump() + "\n");
}

const char* to_string(Orientation o) {
  switch (o) {
    case Orientation::horizontal: return "horizontal";
    case Orientation::oriented: return "oriented";
    case Orientation::vertical: return "vertical";
  }
  return "horizontal";
}

Orientation orientation_from_string(const std::string& s) {
  if (s == "horizontal") return Orientation::horizontal;
  if (s == "oriented") return Orientation::oriented;
  if (s == "vertical") return Orientation::vertical;
  throw SchemaError("unknown orientation: " + s);
}

void validate_sample(const ImageSample& sample, int record, int vocab_size) {
  auto where = [record](const std::string& what) {
    return "record " + std::to_string(record) + ": " + what;
  };
  if (sample.origin == Origin::real && sample.keywords.has_value())
    throw InvariantError(where("real sample carries keyword annotations"));
  if (sample.origin == Origin::synthetic && !sample.keywords.has_value())
    throw InvariantError(where("synthetic sample is missing the keyword list"));

  for (const TextLineAnno& line : sample.lines) {
    if (line.transcription.empty()) throw InvariantError(where("empty transcription"));
    text_to_glyphs(line.transcription);
    line.poly.validate();
  }
  if (!sample.keywords) return;
  for (const KeywordAnno& kw : sample.keywords.value()) {
    if (kw.class_id < 1) throw InvariantError(where("keyword class id must be >= 1"));
    if (vocab_size >= 0 && kw.class_id > vocab_size)
      throw InvariantError(where("keyword class id outside vocabulary"));
    if (kw.parent_line < 0 || kw.parent_line >= int(sample.lines.size()))
      throw InvariantError(where("keyword parent_line out of range"));
    kw.poly.validate();
    const QuadPolygon& parent = sample.lines[size_t(kw.parent_line)].poly;
    std::span<const Vec2> pspan(parent.v.data(), 4);
    for (const Vec2& v : kw.poly.v) {
      if (!point_in_polygon(v, pspan) &&
          point_to_polygon_distance(v, pspan) > kContainDilationPx)
        throw InvariantError(where("keyword polygon escapes its parent line"));
    }
  }
}

std::vector<ImageSample> load_dataset(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path);
  fs::path base = fs::path(manifest_path).parent_path();

  std::vector<ImageSample> samples;
  std::string line;
  int record = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++record;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw SchemaError("record " + std::to_string(record) + ": " + e.what());
    }
    auto where = [record](const std::string& what) {
      return "record " + std::to_string(record) + ": " + what;
    };
    if (!j.is_object() || !j.contains("image") || !j.contains("origin") || !j.contains("lines"))
      throw SchemaError(where("required keys: image, origin, lines"));

    ImageSample s;
    s.image_path = j["image"].get<std::string>();
    std::string origin = j["origin"].get<std::string>();
    if (origin == "synthetic")
      s.origin = Origin::synthetic;
    else if (origin == "real")
      s.origin = Origin::real;
    else
      throw SchemaError(where("origin must be synthetic or real"));

    for (const json& jl : j["lines"]) {
      if (!jl.contains("poly") || !jl.contains("text") || !jl.contains("orientation"))
        throw SchemaError(where("line needs poly, text, orientation"));
      TextLineAnno anno;
      anno.poly = poly_from_json(jl["poly"], record);
      anno.transcription = jl["text"].get<std::string>();
      anno.orientation = orientation_from_string(jl["orientation"].get<std::string>());
      s.lines.push_back(std::move(anno));
    }
    if (j.contains("keywords")) {
      if (s.origin == Origin::real)
        throw InvariantError(where("real sample carries keyword annotations"));
      std::vector<KeywordAnno> kws;
      for (const json& jk : j["keywords"]) {
        if (!jk.contains("poly") || !jk.contains("class_id") || !jk.contains("parent_line"))
          throw SchemaError(where("keyword needs poly, class_id, parent_line"));
        KeywordAnno kw;
        kw.poly = poly_from_json(jk["poly"], record);
        kw.class_id = jk["class_id"].get<int>();
        kw.parent_line = jk["parent_line"].get<int>();
        kws.push_back(std::move(kw));
      }
      s.keywords = std::move(kws);
    } else if (s.origin == Origin::synthetic) {
      throw SchemaError(where("synthetic sample must carry a keywords list"));
    }

    s.image = read_png((base / s.image_path).string());
    validate_sample(s, record, -1);
    samples.push_back(std::move(s));
  }
  return samples;
}

void save_dataset(const std::vector<ImageSample>& samples, const std::string& manifest_path) {
  fs::path base = fs::path(manifest_path).parent_path();
  std::ostringstream manifest;

  int record = 0;
  for (const ImageSample& s : samples) {
    validate_sample(s, record, -1);
    std::string rel = s.image_path;
    if (rel.empty()) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "images/sample_%06d.png", record);
      rel = buf;
    }
    fs::path img_path = base / rel;
    if (img_path.has_parent_path()) fs::create_directories(img_path.parent_path());
    write_png(s.image, img_path.string());

    json j;
    j["image"] = rel;
    j["origin"] = s.origin == Origin::synthetic ? "synthetic" : "real";
    json lines = json::array();
    for (const TextLineAnno& line : s.lines) {
      json jl;
      jl["poly"] = poly_to_json(line.poly);
      jl["text"] = line.transcription;
      jl["orientation"] = to_string(line.orientation);
      lines.push_back(std::move(jl));
    }
    j["lines"] = std::move(lines);
    if (s.keywords) {
      json kws = json::array();
      for (const KeywordAnno& kw : s.keywords.value()) {
        json jk;
        jk["poly"] = poly_to_json(kw.poly);
        jk["class_id"] = kw.class_id;
        jk["parent_line"] = kw.parent_line;
        kws.push_back(std::move(jk));
      }
      j["keywords"] = std::move(kws);
    }
    manifest << j.dump() << "\n";
    ++record;
  }
  write_file_atomic(manifest_path, manifest.str());
}

ImageSample strip_keywords(const ImageSample& sample) {
  if (sample.origin != Origin::synthetic)
    throw InvariantError("strip_keywords expects a synthetic sample");
  ImageSample out = sample;
  out.keywords.reset();
  out.origin = Origin::real;
  return out;
}

}  // namespace kwspot
