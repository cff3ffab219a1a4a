#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "taskguide/recipe.hpp"
#include "taskguide/templates.hpp"

namespace tg_test {

inline std::filesystem::path source_path(const std::filesystem::path& rel) {
  return std::filesystem::path(TASKGUIDE_SOURCE_DIR) / rel;
}

inline std::filesystem::path pinwheel_recipe_path() { return source_path("fixtures/pinwheel.json"); }
inline std::filesystem::path pinwheel_captions_path() { return source_path("fixtures/pinwheel_captions.jsonl"); }

inline const taskguide::Recipe& pinwheel() {
  static const taskguide::Recipe recipe = taskguide::load_recipe(pinwheel_recipe_path());
  return recipe;
}

inline const taskguide::TemplateRegistry& bundled_templates() {
  static const taskguide::TemplateRegistry reg =
      taskguide::TemplateRegistry::load_directory(source_path("config/templates"));
  return reg;
}

/// Per-step caption counts of the bundled corpus (one video, 13 steps).
inline const std::vector<std::size_t> kPinwheelCounts = {11,  16,  773, 152, 523, 153, 387,
                                                         466, 407, 338, 355, 1752, 338};

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("taskguide-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path file(const std::string& name) const { return path_ / name; }

  std::filesystem::path write(const std::string& name, const std::string& content) const {
    std::ofstream out(path_ / name, std::ios::binary);
    out << content;
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string minimal_recipe_json(const std::string& id = "toast") {
  return R"({"id":")" + id + R"(","title":"Toast","steps":[{"index":0,"short":"toast bread","medium":"Toast the bread in the toaster","long":"Put a slice of bread into the toaster and push the lever down until it pops back up"}]})";
}

}  // namespace tg_test
