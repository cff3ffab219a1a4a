#include "taskguide/recipe.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "taskguide/error.hpp"

namespace taskguide {

using nlohmann::json;

std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::Short:
      return "short";
    case Granularity::Medium:
      return "medium";
    case Granularity::Long:
      return "long";
  }
  return "unknown";
}

std::optional<Granularity> parse_granularity(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (Granularity g : kAllGranularities) {
    if (lower == to_string(g)) return g;
  }
  return std::nullopt;
}

const std::string& Step::reference(Granularity g) const {
  switch (g) {
    case Granularity::Short:
      return short_ref;
    case Granularity::Medium:
      return medium_ref;
    case Granularity::Long:
      break;
  }
  return long_ref;
}

std::size_t word_count(std::string_view text) {
  std::size_t words = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++words;
    }
  }
  return words;
}

namespace {

std::string require_string(const json& obj, const char* field, const std::string& where) {
  auto it = obj.find(field);
  if (it == obj.end()) throw SchemaError(where + ": missing field '" + field + "'");
  if (!it->is_string()) throw SchemaError(where + ": field '" + field + "' must be a string");
  return it->get<std::string>();
}

// A medium reference is one sentence: no sentence terminator before the end.
bool is_single_sentence(std::string_view text) {
  auto end = text.find_last_not_of(" \t\r\n");
  if (end == std::string_view::npos) return false;
  std::string_view body = text.substr(0, end);
  for (std::size_t i = 0; i < body.size(); ++i) {
    char c = body[i];
    if ((c == '.' || c == '!' || c == '?') && i + 1 < body.size() &&
        std::isspace(static_cast<unsigned char>(body[i + 1]))) {
      return false;
    }
  }
  return true;
}

}  // namespace

Recipe parse_recipe(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("recipe is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw SchemaError("recipe: document must be a JSON object");

  Recipe recipe;
  recipe.id = require_string(doc, "id", "recipe");
  recipe.title = require_string(doc, "title", "recipe");

  auto steps = doc.find("steps");
  if (steps == doc.end()) throw SchemaError("recipe: missing field 'steps'");
  if (!steps->is_array()) throw SchemaError("recipe: field 'steps' must be an array");

  for (std::size_t i = 0; i < steps->size(); ++i) {
    const json& entry = (*steps)[i];
    std::string where = "steps[" + std::to_string(i) + "]";
    if (!entry.is_object()) throw SchemaError(where + ": must be an object");
    auto idx = entry.find("index");
    if (idx == entry.end()) throw SchemaError(where + ": missing field 'index'");
    if (!idx->is_number_unsigned()) {
      throw SchemaError(where + ": field 'index' must be a non-negative integer");
    }
    Step step;
    step.index = idx->get<std::size_t>();
    where = "step " + std::to_string(step.index);
    for (auto [field, target] : {std::pair{"short", &step.short_ref},
                                 std::pair{"medium", &step.medium_ref},
                                 std::pair{"long", &step.long_ref}}) {
      auto it = entry.find(field);
      if (it == entry.end()) {
        throw ValidationError(where + ": missing granularity '" + field + "'");
      }
      if (!it->is_string()) throw SchemaError(where + ": field '" + field + "' must be a string");
      *target = it->get<std::string>();
    }
    recipe.steps.push_back(std::move(step));
  }

  std::stable_sort(recipe.steps.begin(), recipe.steps.end(),
                   [](const Step& a, const Step& b) { return a.index < b.index; });

  ValidationReport report = validate_recipe(recipe);
  if (!report.empty()) {
    const Violation& first = report.front();
    std::string msg = first.step ? "step " + std::to_string(*first.step) + ": " : "recipe: ";
    throw ValidationError(msg + first.message);
  }
  return recipe;
}

Recipe load_recipe(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read recipe file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_recipe(buf.str());
}

std::string serialize_recipe(const Recipe& recipe) {
  json steps = json::array();
  for (const Step& s : recipe.steps) {
    steps.push_back({{"index", s.index},
                     {"short", s.short_ref},
                     {"medium", s.medium_ref},
                     {"long", s.long_ref}});
  }
  json doc = {{"id", recipe.id}, {"title", recipe.title}, {"steps", std::move(steps)}};
  return doc.dump(2) + "\n";
}

const std::string& step_reference(const Recipe& recipe, std::size_t step_index, Granularity g) {
  if (step_index >= recipe.steps.size()) {
    throw RangeError("step index " + std::to_string(step_index) + " out of range for recipe '" +
                     recipe.id + "' with " + std::to_string(recipe.steps.size()) + " steps");
  }
  return recipe.steps[step_index].reference(g);
}

ValidationReport validate_recipe(const Recipe& recipe) {
  ValidationReport report;
  if (recipe.id.empty()) report.push_back({std::nullopt, "id is empty"});
  if (recipe.steps.empty()) report.push_back({std::nullopt, "recipe has no steps"});

  for (std::size_t pos = 0; pos < recipe.steps.size(); ++pos) {
    const Step& s = recipe.steps[pos];
    if (s.index != pos) {
      report.push_back({s.index, "step indices are not contiguous: expected " +
                                     std::to_string(pos) + ", found " + std::to_string(s.index)});
    }
    for (Granularity g : kAllGranularities) {
      if (s.reference(g).empty()) {
        report.push_back({s.index, std::string(to_string(g)) + " reference is empty"});
      }
    }
    if (word_count(s.short_ref) > kMaxShortWords) {
      report.push_back({s.index, "short reference has more than " +
                                     std::to_string(kMaxShortWords) + " words"});
    }
    if (!s.medium_ref.empty() && !is_single_sentence(s.medium_ref)) {
      report.push_back({s.index, "medium reference is not a single sentence"});
    }
    if (s.long_ref.size() < s.medium_ref.size()) {
      report.push_back({s.index, "long reference is shorter than medium reference"});
    }
  }
  return report;
}

}  // namespace taskguide
