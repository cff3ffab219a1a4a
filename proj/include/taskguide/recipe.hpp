#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace taskguide {

/// Verbosity of a step's reference text. Ordered Short < Medium < Long.
enum class Granularity { Short = 0, Medium = 1, Long = 2 };

inline constexpr std::array<Granularity, 3> kAllGranularities = {
    Granularity::Short, Granularity::Medium, Granularity::Long};

std::string_view to_string(Granularity g);
/// Accepts "short" | "medium" | "long" (case-insensitive).
std::optional<Granularity> parse_granularity(std::string_view name);

struct Step {
  std::size_t index = 0;
  std::string short_ref;
  std::string medium_ref;
  std::string long_ref;

  const std::string& reference(Granularity g) const;
  bool operator==(const Step&) const = default;
};

/// Immutable after parsing; share freely across threads.
struct Recipe {
  std::string id;
  std::string title;
  std::vector<Step> steps;

  std::size_t size() const { return steps.size(); }
  bool operator==(const Recipe&) const = default;
};

/// Upper bound on words in a short reference.
inline constexpr std::size_t kMaxShortWords = 4;

struct Violation {
  std::optional<std::size_t> step;  // empty for recipe-level violations
  std::string message;
};

using ValidationReport = std::vector<Violation>;

/// Parses a recipe JSON document. Steps are reordered by their `index` field.
/// Throws SchemaError for structural problems and ValidationError when the
/// parsed recipe breaks an invariant.
Recipe parse_recipe(std::string_view document);
Recipe load_recipe(const std::filesystem::path& path);

/// Canonical JSON (steps in index order, two-space indent).
std::string serialize_recipe(const Recipe& recipe);

/// Throws RangeError if step_index is out of range.
const std::string& step_reference(const Recipe& recipe, std::size_t step_index, Granularity g);

/// Lists every broken invariant. Never throws.
ValidationReport validate_recipe(const Recipe& recipe);

std::size_t word_count(std::string_view text);

}  // namespace taskguide
