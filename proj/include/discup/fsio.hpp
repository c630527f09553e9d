#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "discup/error.hpp"

namespace discup {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open file: " + path);
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return data;
}

// Write via a temp file and rename, so readers never see a partial file.
inline void atomic_write_file(const std::string& path,
                              const std::string& data) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write file: " + tmp);
    out.write(data.data(), std::streamsize(data.size()));
    if (!out) throw FormatError("short write: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline bool file_exists(const std::string& path) {
  return std::filesystem::exists(path);
}

inline uint64_t fnv1a64(const std::string& data) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace discup
