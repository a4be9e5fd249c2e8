#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <string>

namespace lensformer::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() : TempDir(current_test_name()) {}
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() / ("lensformer_" + name);
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  static std::string current_test_name() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    return info ? std::string(info->test_suite_name()) + "_" + info->name() : "test";
  }

  std::filesystem::path path_;
};

}  // namespace lensformer::testing
