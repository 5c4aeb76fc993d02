#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "kwspot/errors.hpp"
#include "kwspot/rng.hpp"

namespace kwspot {

// Write-temp-then-rename so readers never observe partial files.
inline void write_file_atomic(const std::string& path, const std::string& content) {
  std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    if (!out) throw IoError("short write on " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline uint64_t file_hash(const std::string& path) {
  const std::string bytes = read_file(path);
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace kwspot
