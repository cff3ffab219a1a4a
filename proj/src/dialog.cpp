#include "taskguide/dialog.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <regex>

#include <nlohmann/json.hpp>

#include "taskguide/enhancer.hpp"
#include "taskguide/error.hpp"

namespace taskguide {

std::string_view to_string(IntentKind k) {
  switch (k) {
    case IntentKind::NextStep:
      return "NextStep";
    case IntentKind::PreviousStep:
      return "PreviousStep";
    case IntentKind::HowStep:
      return "HowStep";
    case IntentKind::FixMistake:
      return "FixMistake";
    case IntentKind::Freeform:
      break;
  }
  return "Freeform";
}

namespace {

std::string lowercase(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (unsigned char c : text) {
    // Curly apostrophes arrive as UTF-8 sequences; keep bytes as they are.
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

bool matches(const std::string& text, const std::regex& re) { return std::regex_search(text, re); }

constexpr std::array<std::string_view, 13> kOrdinals = {
    "first", "second", "third", "fourth", "fifth", "sixth", "seventh",
    "eighth", "ninth", "tenth", "eleventh", "twelfth", "thirteenth"};

std::optional<std::size_t> explicit_step(const std::string& text) {
  static const std::regex kNumbered(R"(\bstep\s*(?:number\s*|#\s*)?(\d+)\b)");
  static const std::regex kSuffixed(R"(\b(\d+)(?:st|nd|rd|th)\s+step\b)");
  std::smatch m;
  if (std::regex_search(text, m, kNumbered) || std::regex_search(text, m, kSuffixed)) {
    const unsigned long n = std::stoul(m[1].str());
    if (n >= 1) return static_cast<std::size_t>(n - 1);
    return std::nullopt;
  }
  for (std::size_t i = 0; i < kOrdinals.size(); ++i) {
    const std::regex ordinal("\\b" + std::string(kOrdinals[i]) + "\\s+step\\b");
    if (std::regex_search(text, ordinal)) return i;
  }
  return std::nullopt;
}

}  // namespace

Intent classify_intent(std::string_view utterance) {
  static const std::regex kMistake(
      R"(\b(mistake|mistakes|wrong|fix|messed up|mess up|screwed up|tore|torn|ripped|broke|broken|spilled|dropped|oops)\b)");
  static const std::regex kPrevious(R"(\b(previous|before|go back|last step|step back)\b)");
  static const std::regex kNext(R"(\b(next|then what|what now|after this|after that)\b)");
  static const std::regex kHow(R"(\b(how do i|how to|how should i|how can i|how does)\b)");
  static const std::regex kStepMention(R"(\bsteps?\b)");

  const std::string text = lowercase(utterance);
  if (matches(text, kMistake)) return {IntentKind::FixMistake, std::nullopt};
  if (matches(text, kPrevious)) return {IntentKind::PreviousStep, std::nullopt};
  if (matches(text, kNext)) return {IntentKind::NextStep, std::nullopt};
  if (matches(text, kHow) && matches(text, kStepMention)) {
    return {IntentKind::HowStep, explicit_step(text)};
  }
  return {IntentKind::Freeform, std::nullopt};
}

nlohmann::json to_json(const DialogTurn& t) {
  nlohmann::json intent = {{"kind", to_string(t.intent.kind)}};
  if (t.intent.step) intent["step"] = *t.intent.step;
  return nlohmann::json{{"turn_index", t.turn_index},
                        {"user_text", t.user_text},
                        {"intent", std::move(intent)},
                        {"context",
                         {{"step_index", t.context.step_index},
                          {"recipe_id", t.context.recipe_id},
                          {"history_length", t.context.history_length}}},
                        {"assistant_text", t.assistant_text},
                        {"latency_ms", t.latency_ms},
                        {"degraded", t.degraded}};
}

std::optional<std::size_t> target_step(const Intent& intent, std::size_t current, std::size_t step_count) {
  if (step_count == 0) return std::nullopt;
  const std::size_t last = step_count - 1;
  current = std::min(current, last);
  switch (intent.kind) {
    case IntentKind::NextStep:
      return std::min(current + 1, last);
    case IntentKind::PreviousStep:
      return current == 0 ? 0 : current - 1;
    case IntentKind::HowStep:
      if (intent.step && *intent.step <= last) return *intent.step;
      return current;
    case IntentKind::FixMistake:
    case IntentKind::Freeform:
      break;
  }
  return std::nullopt;
}

namespace {

std::string describe(const Recipe& recipe, std::size_t index) {
  return "Step " + std::to_string(index + 1) + " (" + recipe.steps[index].medium_ref + ")";
}

std::string instruction_for(const Intent& intent, std::size_t current, std::size_t step_count) {
  const std::size_t last = step_count - 1;
  switch (intent.kind) {
    case IntentKind::NextStep:
      if (current >= last) {
        return "The user is on the final step, so there is no next step. Tell them the task is "
               "complete once they finish this step.";
      }
      return "Tell the user how to do the target step, which comes right after their current step.";
    case IntentKind::PreviousStep:
      if (current == 0) {
        return "The user is on the first step, so there is no previous step. Tell them this is the "
               "first step and briefly explain it.";
      }
      return "Remind the user what the target step, the one before their current step, involved.";
    case IntentKind::HowStep:
      return "Explain how to perform the target step in practical, concrete terms.";
    case IntentKind::FixMistake:
      return "The user made a mistake. Using the detailed step descriptions above, suggest how to "
             "fix it and how to continue with the recipe.";
    case IntentKind::Freeform:
      break;
  }
  return "Answer the user briefly, staying grounded in the recipe and their current step.";
}

std::string format_history(std::span<const DialogTurn> history, std::size_t cap) {
  const std::size_t take = std::min(history.size(), cap);
  if (take == 0) return "(no previous turns)";
  std::string out;
  for (const DialogTurn& t : history.subspan(history.size() - take)) {
    if (!out.empty()) out.push_back('\n');
    out += "User: " + t.user_text + "\nAssistant: " + t.assistant_text;
  }
  return out;
}

}  // namespace

std::string build_dialog_prompt(const Intent& intent, const Recipe& recipe,
                                const StepEstimate& estimate, std::span<const DialogTurn> history,
                                std::string_view utterance, const DialogPromptOptions& options) {
  if (options.templates == nullptr) throw ConfigError("dialog prompt options have no template registry");
  if (options.history_cap < 2) throw ConfigError("dialog history cap must be at least 2");
  if (estimate.step_index >= recipe.size()) {
    throw RangeError("estimated step " + std::to_string(estimate.step_index) +
                     " is outside recipe '" + recipe.id + "'");
  }
  const std::string& tmpl = options.templates->get(options.template_id);
  const std::size_t current = estimate.step_index;
  const auto target = target_step(intent, current, recipe.size());

  std::string details;
  if (intent.kind == IntentKind::FixMistake) {
    details = "Current step in detail: " + recipe.steps[current].long_ref + "\n";
    details += "Previous step in detail: " +
               (current == 0 ? std::string("none, this is the first step")
                             : recipe.steps[current - 1].long_ref) +
               "\n";
  }

  const std::map<std::string, std::string> values = {
      {"recipe_title", recipe.title},
      {"recipe_steps", format_step_list(recipe, Granularity::Medium)},
      {"current_step", describe(recipe, current)},
      {"intent", std::string(to_string(intent.kind))},
      {"target_step", target ? describe(recipe, *target) : std::string("none")},
      {"step_details", details},
      {"history", format_history(history, options.history_cap)},
      {"utterance", std::string(utterance)},
      {"instruction", instruction_for(intent, current, recipe.size())}};
  return render_template(tmpl, values);
}

DialogSession::DialogSession(std::shared_ptr<const Recipe> recipe, DialogPromptOptions options)
    : recipe_(std::move(recipe)), options_(std::move(options)) {
  if (!recipe_) throw ConfigError("dialog session needs a recipe");
  if (options_.templates == nullptr) throw ConfigError("dialog session needs a template registry");
  options_.templates->get(options_.template_id);
}

DialogTurn DialogSession::answer(std::string_view utterance, const StepEstimate& estimate,
                                 ChatBackend& backend) {
  if (utterance.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    throw InputError("utterance is empty");
  }
  std::vector<DialogTurn> recent;
  std::size_t history_length = 0;
  {
    std::lock_guard lock(mutex_);
    history_length = turns_.size();
    const std::size_t take = std::min(turns_.size(), options_.history_cap);
    recent.assign(turns_.end() - static_cast<std::ptrdiff_t>(take), turns_.end());
  }

  DialogTurn turn;
  turn.user_text = std::string(utterance);
  turn.intent = classify_intent(utterance);
  turn.context = {estimate.step_index, recipe_->id, history_length};

  const auto start = std::chrono::steady_clock::now();
  ChatRequest req;
  req.prompt = build_dialog_prompt(turn.intent, *recipe_, estimate, recent, utterance, options_);
  try {
    ChatResponse resp = backend.complete(req);
    if (resp.text.empty()) throw ProtocolError(backend.id() + ": empty reply");
    turn.assistant_text = std::move(resp.text);
  } catch (const Error&) {
    turn.assistant_text = std::string(kCannedFailureReply);
    turn.degraded = true;
  }
  turn.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

  std::lock_guard lock(mutex_);
  turn.turn_index = turns_.size();
  turns_.push_back(turn);
  return turn;
}

std::vector<DialogTurn> DialogSession::history() const {
  std::lock_guard lock(mutex_);
  return turns_;
}

std::size_t DialogSession::size() const {
  std::lock_guard lock(mutex_);
  return turns_.size();
}

}  // namespace taskguide
