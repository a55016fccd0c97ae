#pragma once

#include <doctest.h>

#include <filesystem>
#include <string>

#include "stylus/common.hpp"

namespace testutil {

inline std::u32string u32(const std::string& s) { return stylus::utf8_decode(s); }

// Fresh scratch directory per test binary run.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = (std::filesystem::temp_directory_path() / ("stylus_test_" + tag + "_" + std::to_string(::getpid())))
                .string();
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::string& path() const { return path_; }
  std::string sub(const std::string& name) const { return path_ + "/" + name; }

 private:
  std::string path_;
};

inline std::string assets_dir() { return STYLUS_ASSETS_DIR; }

}  // namespace testutil
