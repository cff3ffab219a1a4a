#include "taskguide/templates.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "taskguide/error.hpp"

namespace taskguide {

TemplateRegistry TemplateRegistry::load_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("template directory not found: " + dir.string());
  }
  TemplateRegistry reg;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    if (!in) throw IoError("cannot read template " + entry.path().string());
    std::ostringstream buf;
    buf << in.rdbuf();
    reg.add(entry.path().stem().string(), buf.str());
  }
  return reg;
}

void TemplateRegistry::add(std::string id, std::string text) { templates_[std::move(id)] = std::move(text); }

const std::string& TemplateRegistry::get(const std::string& id) const {
  auto it = templates_.find(id);
  if (it == templates_.end()) throw ConfigError("unknown template_id '" + id + "'");
  return it->second;
}

std::vector<std::string> TemplateRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : templates_) out.push_back(id);
  return out;
}

std::string render_template(std::string_view text, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t open = text.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(text.substr(pos));
      break;
    }
    out.append(text.substr(pos, open - pos));
    const std::size_t close = text.find('}', open + 1);
    std::string_view name =
        close == std::string_view::npos ? std::string_view{} : text.substr(open + 1, close - open - 1);
    const bool is_placeholder =
        !name.empty() && std::all_of(name.begin(), name.end(), [](unsigned char c) {
          return std::isalnum(c) || c == '_';
        });
    if (!is_placeholder) {
      out.push_back('{');
      pos = open + 1;
      continue;
    }
    auto it = values.find(std::string(name));
    if (it == values.end()) {
      throw ConfigError("template placeholder {" + std::string(name) + "} has no value");
    }
    out.append(it->second);
    pos = close + 1;
  }
  return out;
}

}  // namespace taskguide
