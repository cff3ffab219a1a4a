#include "taskguide/mock_backends.hpp"

#include <cctype>
#include <chrono>
#include <regex>
#include <thread>

#include "taskguide/error.hpp"
#include "taskguide/hashing.hpp"
#include "taskguide/recipe.hpp"

namespace taskguide {

EmbeddingVector trigram_embedding(std::string_view text, Eigen::Index dim) {
  std::string norm = " ";
  for (unsigned char c : text) {
    char mapped = std::isalnum(c) ? static_cast<char>(std::tolower(c)) : ' ';
    if (mapped == ' ' && norm.back() == ' ') continue;
    norm.push_back(mapped);
  }
  if (norm.back() != ' ') norm.push_back(' ');

  EmbeddingVector counts = EmbeddingVector::Zero(dim);
  for (std::size_t i = 0; i + 3 <= norm.size(); ++i) {
    const auto bucket = fnv1a64(std::string_view(norm).substr(i, 3)) % static_cast<std::uint64_t>(dim);
    counts(static_cast<Eigen::Index>(bucket)) += 1.0;
  }
  if (counts.isZero()) {
    throw DomainError("text has no character trigrams: '" + std::string(text) + "'");
  }
  return normalized_embedding(counts);
}

void simulate_latency(std::int64_t delay_ms, std::int64_t timeout_ms, const std::string& who) {
  if (delay_ms <= 0) return;
  if (delay_ms > timeout_ms) {
    std::this_thread::sleep_for(std::chrono::milliseconds(timeout_ms));
    throw TimeoutError(who + ": timed out after " + std::to_string(timeout_ms) + " ms");
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
}

TrigramEmbedder::TrigramEmbedder(std::string id, Eigen::Index dim, std::int64_t delay_ms,
                                 std::int64_t timeout_ms)
    : id_(std::move(id)), dim_(dim), delay_ms_(delay_ms), timeout_ms_(timeout_ms) {
  if (dim_ <= 0) throw ConfigError("trigram embedder dimension must be positive");
}

std::vector<EmbeddingVector> TrigramEmbedder::embed_batch(std::span<const std::string> texts) {
  if (texts.empty()) throw InputError("embed_batch: empty input");
  simulate_latency(delay_ms_, timeout_ms_, id_);
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const std::string& t : texts) out.push_back(trigram_embedding(t, dim_));
  return out;
}

ChatResponse MockChatBase::complete(const ChatRequest& request) {
  ++calls_;
  const auto start = std::chrono::steady_clock::now();
  simulate_latency(delay_ms_, timeout_ms_, id_);
  ChatResponse resp;
  resp.text = reply(request);
  resp.usage.prompt_tokens =
      static_cast<std::int64_t>(word_count(request.system) + word_count(request.prompt));
  resp.usage.completion_tokens = static_cast<std::int64_t>(word_count(resp.text));
  resp.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return resp;
}

ScriptedChat::ScriptedChat(std::map<std::string, std::string> table,
                           std::vector<std::pair<std::string, std::string>> contains,
                           std::optional<std::string> default_reply, std::string id,
                           std::int64_t delay_ms, std::int64_t timeout_ms)
    : MockChatBase(std::move(id), delay_ms, timeout_ms),
      table_(std::move(table)),
      contains_(std::move(contains)),
      default_reply_(std::move(default_reply)) {}

std::string ScriptedChat::reply(const ChatRequest& request) {
  if (auto it = table_.find(request.prompt); it != table_.end()) return it->second;
  for (const auto& [needle, answer] : contains_) {
    if (request.prompt.find(needle) != std::string::npos ||
        request.system.find(needle) != std::string::npos) {
      return answer;
    }
  }
  if (default_reply_) return *default_reply_;
  throw ProtocolError(id() + ": no scripted reply for prompt", 404);
}

bool FailingChat::should_fail(const ChatRequest& request) const {
  if (opts_.fail_substring) {
    return request.prompt.find(*opts_.fail_substring) != std::string::npos ||
           request.system.find(*opts_.fail_substring) != std::string::npos;
  }
  if (opts_.fail_rate) {
    const std::uint64_t h = fnv1a64(request.prompt, fnv1a64(request.system) ^ opts_.seed);
    return static_cast<double>(h % 1000000ULL) < *opts_.fail_rate * 1e6;
  }
  return true;
}

std::string FailingChat::reply(const ChatRequest& request) {
  if (should_fail(request)) throw ProtocolError(id() + ": injected failure", 503);
  return request.prompt;
}

std::vector<std::pair<std::size_t, std::string>> parse_step_lines(std::string_view text) {
  static const std::regex kStepLine(R"(^\s*Step (\d+): (.+?)\s*$)");
  std::vector<std::pair<std::size_t, std::string>> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(pos, end - pos));
    std::smatch m;
    if (std::regex_match(line, m, kStepLine)) {
      out.emplace_back(std::stoul(m[1].str()), m[2].str());
    }
    pos = end + 1;
  }
  return out;
}

std::string RuleChat::reply(const ChatRequest& request) {
  const auto steps = parse_step_lines(request.system);
  if (steps.empty()) return request.prompt;
  const EmbeddingVector query = trigram_embedding(request.prompt);
  std::size_t best = 0;
  double best_score = -2.0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const double s = cosine_similarity(query, trigram_embedding(steps[i].second));
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return steps[best].second;
}

std::optional<std::string> mock_audio_text(std::string_view bytes) {
  if (bytes.substr(0, kMockAudioMagic.size()) != kMockAudioMagic) return std::nullopt;
  return std::string(bytes.substr(kMockAudioMagic.size()));
}

MockAsr::MockAsr(std::map<std::string, std::string> transcripts, std::string id)
    : id_(std::move(id)), transcripts_(std::move(transcripts)) {}

std::map<std::string, std::string> MockAsr::default_transcripts() {
  return {{"ask_next", "what is the next step"},
          {"ask_previous", "what is the previous step"},
          {"ask_fix", "I tore the tortilla, how do I fix it"}};
}

std::string MockAsr::transcribe(const AudioInput& audio) {
  if (audio.bytes.empty()) throw InputError("transcribe: empty audio");
  if (!is_supported_sample_rate(audio.sample_rate_hz)) {
    throw InputError("transcribe: unsupported sample rate " + std::to_string(audio.sample_rate_hz));
  }
  if (auto text = mock_audio_text(audio.bytes)) return *text;
  if (auto it = transcripts_.find(audio.bytes); it != transcripts_.end()) return it->second;
  throw ProtocolError(id_ + ": unrecognized audio fixture", 422);
}

AudioPayload MockTts::synthesize(std::string_view text) {
  if (text.empty()) throw InputError("synthesize: empty text");
  AudioPayload out;
  out.format = std::string(kMockAudioFormat);
  out.bytes = std::string(kMockAudioMagic) + std::string(text);
  return out;
}

}  // namespace taskguide
