#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace taskguide {

/// Prompt templates keyed by id. A template file `<id>.txt` holds UTF-8 text
/// with `{name}` placeholders.
class TemplateRegistry {
 public:
  /// Loads every `*.txt` file in `dir`. Throws IoError if `dir` is missing.
  static TemplateRegistry load_directory(const std::filesystem::path& dir);

  void add(std::string id, std::string text);
  bool contains(const std::string& id) const { return templates_.count(id) != 0; }
  /// Throws ConfigError for an unknown id.
  const std::string& get(const std::string& id) const;
  std::vector<std::string> ids() const;

 private:
  std::map<std::string, std::string> templates_;
};

/// Substitutes `{name}` placeholders. Throws ConfigError if the template
/// uses a placeholder missing from `values`.
std::string render_template(std::string_view text, const std::map<std::string, std::string>& values);

}  // namespace taskguide
