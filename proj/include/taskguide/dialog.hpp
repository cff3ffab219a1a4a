#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "taskguide/backends.hpp"
#include "taskguide/estimator.hpp"
#include "taskguide/recipe.hpp"
#include "taskguide/templates.hpp"

namespace taskguide {

enum class IntentKind { NextStep, PreviousStep, HowStep, FixMistake, Freeform };

std::string_view to_string(IntentKind k);

struct Intent {
  IntentKind kind = IntentKind::Freeform;
  /// HowStep only: explicit step index (0-based), or empty for "the current step".
  std::optional<std::size_t> step;

  bool operator==(const Intent&) const = default;
};

/// Rule-based, in tiers: mistake words, then previous, then next, then
/// "how do I ..." with a step mention. Everything else is Freeform.
/// Numbered mentions ("step 3", "third step") are 1-based in the utterance.
Intent classify_intent(std::string_view utterance);

inline constexpr const char* kDefaultDialogTemplate = "dialog.v1";
inline constexpr std::size_t kDefaultHistoryCap = 8;

struct DialogContextSnapshot {
  std::size_t step_index = 0;
  std::string recipe_id;
  std::size_t history_length = 0;
};

struct DialogTurn {
  std::uint64_t turn_index = 0;
  std::string user_text;
  Intent intent;
  DialogContextSnapshot context;
  std::string assistant_text;
  double latency_ms = 0.0;
  /// Set when the backend failed and `assistant_text` is the canned reply.
  bool degraded = false;
};

nlohmann::json to_json(const DialogTurn& t);

inline constexpr std::string_view kCannedFailureReply =
    "Sorry, I could not reach the assistant just now. Please ask again in a moment.";

struct DialogPromptOptions {
  const TemplateRegistry* templates = nullptr;
  std::string template_id = kDefaultDialogTemplate;
  std::size_t history_cap = kDefaultHistoryCap;
};

/// Target step pinned by the prompt for `intent` at `current`, clamped to
/// the recipe. Empty for FixMistake and Freeform.
std::optional<std::size_t> target_step(const Intent& intent, std::size_t current, std::size_t step_count);

/// Deterministic prompt built from recipe (medium refs), estimated step,
/// the last `history_cap` turns of `history`, and the utterance.
/// Throws RangeError for an estimate outside the recipe, ConfigError for an
/// unknown template.
std::string build_dialog_prompt(const Intent& intent, const Recipe& recipe,
                                const StepEstimate& estimate, std::span<const DialogTurn> history,
                                std::string_view utterance, const DialogPromptOptions& options);

/// Conversation state for one session. Concurrent `answer` calls build
/// prompts and call the backend in parallel; appends are serialized.
class DialogSession {
 public:
  DialogSession(std::shared_ptr<const Recipe> recipe, DialogPromptOptions options);

  /// Never throws on backend failure; a canned reply is returned with
  /// `degraded` set and the turn is still recorded. Throws InputError on
  /// an empty utterance.
  DialogTurn answer(std::string_view utterance, const StepEstimate& estimate, ChatBackend& backend);

  std::vector<DialogTurn> history() const;
  std::size_t size() const;

 private:
  std::shared_ptr<const Recipe> recipe_;
  DialogPromptOptions options_;
  mutable std::mutex mutex_;
  std::vector<DialogTurn> turns_;
};

}  // namespace taskguide
