// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "support.hpp"
#include "taskguide/caption.hpp"
#include "taskguide/cli.hpp"
#include "taskguide/dialog.hpp"
#include "taskguide/enhancer.hpp"
#include "taskguide/eval.hpp"
#include "taskguide/mock_backends.hpp"
#include "taskguide/service.hpp"
#include "taskguide/similarity.hpp"

// After Eigen: resolv.h, pulled in by httplib, defines a macro named _res.
#include <httplib.h>

using namespace taskguide;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, const std::function<Outcome()>& fn) {
  Outcome o;
  const auto start = Clock::now();
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  std::cout << (o.passed ? "PASS " : "FAIL ") << name << ": " << o.detail << " (" << secs << " s)" << std::endl;
  if (!o.passed) ++failures;
}

std::string fmt(double v, int digits = 6) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

const LabeledCorpus& enhanced_corpus() {
  static const LabeledCorpus corpus = [] {
    LabeledCorpus c = load_labeled_corpus(tg_test::pinwheel_captions_path(), "pinwheel");
    std::vector<CaptionEvent> events;
    for (const auto& e : c.events) {
      CaptionEvent ev;
      ev.frame_index = e.frame_index;
      ev.text = e.text;
      events.push_back(std::move(ev));
    }
    EnhancementContext ctx;
    ctx.recipe = &tg_test::pinwheel();
    ctx.templates = &tg_test::bundled_templates();
    RuleChat rule;
    const auto out = batch_enhance(ctx, events, rule, 4);
    for (std::size_t i = 0; i < out.size(); ++i) c.events[i].enhanced = out[i].enhanced_text;
    return c;
  }();
  return corpus;
}

std::vector<EvalReport> all_reports() {
  TrigramEmbedder embedder;
  ReferenceCache cache;
  std::vector<EvalReport> out;
  for (Pipeline p : {Pipeline::Raw, Pipeline::Enhanced}) {
    for (Granularity g : kAllGranularities) {
      out.push_back(evaluate_similarity(enhanced_corpus(), tg_test::pinwheel(), g, embedder, p, Against::Truth, &cache));
    }
  }
  return out;
}

Outcome similarity_core() {
  std::mt19937_64 rng(719);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> log_scale(-6.0, 6.0);
  double worst = 0.0;
  double worst_scale = 0.0;
  for (int i = 0; i < 1000; ++i) {
    oracle::Vec a(256), b(256);
    for (double& x : a) x = normal(rng);
    for (double& x : b) x = normal(rng);
    const Eigen::Map<const Eigen::VectorXd> ea(a.data(), 256), eb(b.data(), 256);
    const double c = cosine_similarity(ea, eb);
    worst = std::max(worst, std::abs(c - oracle::cosine(a, b)));
    const double alpha = std::pow(10.0, log_scale(rng));
    worst_scale = std::max(worst_scale, std::abs(cosine_similarity(Eigen::VectorXd(alpha * ea), eb) - c));
  }
  return {worst <= 1e-12 && worst_scale <= 1e-9,
          "max |lib - oracle| = " + fmt(worst) + ", max scale drift = " + fmt(worst_scale)};
}

Outcome evaluation_oracle() {
  TrigramEmbedder embedder;
  const auto& corpus = enhanced_corpus();
  const Recipe& recipe = tg_test::pinwheel();
  double worst = 0.0;
  bool counts_ok = true;
  for (Pipeline p : {Pipeline::Raw, Pipeline::Enhanced}) {
    for (Granularity g : kAllGranularities) {
      const auto r = evaluate_similarity(corpus, recipe, g, embedder, p);
      const auto o = oracle::similarity(corpus, recipe, g, p);
      for (std::size_t s = 0; s < r.per_step.size(); ++s) {
        counts_ok = counts_ok && r.per_step[s].count == o.counts[s];
        worst = std::max(worst, std::abs(r.per_step[s].mean - o.means[s]));
      }
      worst = std::max(worst, std::abs(r.overall_mean - o.overall));
    }
  }
  bool accuracy_ok = true;
  std::string acc_detail;
  for (Granularity g : kAllGranularities) {
    const auto scores = oracle::caption_scores(corpus, recipe, g);
    for (std::size_t w : {1u, 15u}) {
      const auto expected = oracle::smoothed_argmax(scores, w);
      const auto r = classification_accuracy(corpus, recipe, g, embedder, {w, 0.0});
      const std::size_t correct = oracle::correct_count(corpus, expected);
      accuracy_ok = accuracy_ok && r.predictions == expected && r.correct == correct &&
                    r.accuracy == static_cast<double>(correct) / static_cast<double>(corpus.events.size());
      if (g == Granularity::Medium) acc_detail += " W=" + std::to_string(w) + ":" + fmt(r.accuracy);
    }
  }
  return {worst <= 1e-12 && counts_ok && accuracy_ok,
          "max per-step deviation " + fmt(worst) + ", accuracy exact=" + (accuracy_ok ? "yes" : "no") +
              " (medium" + acc_detail + ")"};
}

Outcome table_shape() {
  const auto reports = all_reports();
  const auto t = stepwise_report(reports, 13);
  bool ok = t.step_count == 13 && t.rows.size() == 6 && t.counts == tg_test::kPinwheelCounts;
  for (std::size_t i = 0; i < t.rows.size() && ok; ++i) {
    ok = t.rows[i].pipeline == (i < 3 ? Pipeline::Raw : Pipeline::Enhanced) &&
         t.rows[i].granularity == kAllGranularities[i % 3] && t.rows[i].cells.size() == 13;
    for (const auto& cell : t.rows[i].cells) ok = ok && cell.has_value();
  }
  double worst = 0.0;
  auto check_report = [&](const EvalReport& r) {
    long double num = 0.0L;
    std::size_t den = 0;
    for (const auto& s : r.per_step) {
      num += static_cast<long double>(s.count) * s.mean;
      den += s.count;
      ok = ok && s.mean >= -1.0 && s.mean <= 1.0;
    }
    worst = std::max(worst, std::abs(r.overall_mean - static_cast<double>(num / den)));
  };
  for (const auto& r : reports) check_report(r);
  for (const auto& r : reports_from_csv(report_to_csv(reports))) check_report(r);
  return {ok && worst <= 1e-9,
          "6 rows x 13 steps, counts match, max weighted-mean deviation " + fmt(worst)};
}

Outcome enhancement_direction() {
  TrigramEmbedder embedder;
  const auto raw = evaluate_similarity(enhanced_corpus(), tg_test::pinwheel(), Granularity::Medium, embedder, Pipeline::Raw);
  const auto enh =
      evaluate_similarity(enhanced_corpus(), tg_test::pinwheel(), Granularity::Medium, embedder, Pipeline::Enhanced);
  return {enh.overall_mean > raw.overall_mean, "medium: enhanced " + fmt(enh.overall_mean) + " > raw " + fmt(raw.overall_mean)};
}

Outcome granularity_flag() {
  const auto reports = all_reports();
  const auto t = stepwise_report(reports, 13);
  if (!t.best_enhanced_granularity) return {false, "no granularity flagged"};
  Granularity best = Granularity::Short;
  double best_mean = -2.0;
  std::string detail = "enhanced overall:";
  for (const auto& r : reports) {
    if (r.pipeline != Pipeline::Enhanced) continue;
    detail += " " + std::string(to_string(r.granularity)) + "=" + fmt(r.overall_mean);
    if (r.overall_mean > best_mean) {
      best_mean = r.overall_mean;
      best = r.granularity;
    }
  }
  const std::string rendered = render_comparison_table(t);
  const bool surfaced = rendered.find("best granularity (enhanced): " + std::string(to_string(best))) != std::string::npos;
  return {*t.best_enhanced_granularity == best && surfaced,
          "flagged " + std::string(to_string(*t.best_enhanced_granularity)) + "; " + detail};
}

Outcome cadence() {
  ReplayStream stream(tg_test::pinwheel_captions_path(), CadencePolicy{30.0, 8}, Pacing::RealTime);
  const auto start = Clock::now();
  std::vector<double> at;
  while (stream.next()) {
    at.push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
    if (at.back() >= 60000.0) break;
  }
  double lo = 1e9, hi = 0.0, sum = 0.0;
  for (std::size_t i = 1; i < at.size(); ++i) {
    const double gap = at[i] - at[i - 1];
    lo = std::min(lo, gap);
    hi = std::max(hi, gap);
    sum += gap;
  }
  const double nominal = 1000.0 * 8.0 / 30.0;
  const bool ok = at.size() > 200 && at.back() >= 60000.0 && lo >= 0.8 * nominal && hi <= 1.2 * nominal;
  return {ok, std::to_string(at.size()) + " events over " + fmt(at.back() / 1000.0) + " s, gaps min " + fmt(lo) +
                  " / mean " + fmt(sum / static_cast<double>(at.size() - 1)) + " / max " + fmt(hi) + " ms"};
}

Outcome online_offline() {
  SessionManager manager(default_service_config(), ServiceBackends::mocks());
  HttpServer server(manager);
  const int port = server.start("127.0.0.1", 0);
  ReplayOptions opts;
  opts.session_file = tg_test::pinwheel_captions_path();
  TrigramEmbedder embedder;
  const auto offline = replay_offline(opts, tg_test::pinwheel(), embedder);
  const auto online = replay_http(opts, "pinwheel", "http://127.0.0.1:" + std::to_string(port));
  server.stop();
  std::size_t first_diff = offline.size();
  for (std::size_t i = 0; i < std::min(offline.size(), online.size()); ++i) {
    if (offline[i] != online[i]) {
      first_diff = i;
      break;
    }
  }
  const bool ok = !offline.empty() && online == offline;
  return {ok, std::to_string(online.size()) + " HTTP estimates vs " + std::to_string(offline.size()) + " offline" +
                  (ok ? ", byte-identical" : ", first difference at " + std::to_string(first_diff))};
}

Outcome dialog_contracts() {
  const Recipe& r = tg_test::pinwheel();
  DialogPromptOptions opts;
  opts.templates = &tg_test::bundled_templates();
  auto pinned = [&](IntentKind kind, std::size_t current, std::size_t expected) {
    StepEstimate e = initial_estimate(r.size());
    e.step_index = current;
    const std::string line = "Target step: Step " + std::to_string(expected + 1) + " (" + r.steps[expected].medium_ref + ")\n";
    return build_dialog_prompt({kind, std::nullopt}, r, e, {}, "question", opts).find(line) != std::string::npos;
  };
  std::size_t passed = 0, total = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    total += 2;
    passed += pinned(IntentKind::NextStep, i, std::min(i + 1, r.size() - 1)) ? 1 : 0;
    passed += pinned(IntentKind::PreviousStep, i, i == 0 ? 0 : i - 1) ? 1 : 0;
  }
  // Boundaries: no next step after the last one, no previous step before the first.
  StepEstimate last = initial_estimate(r.size());
  last.step_index = r.size() - 1;
  StepEstimate first = initial_estimate(r.size());
  total += 2;
  passed += build_dialog_prompt({IntentKind::NextStep, {}}, r, last, {}, "q", opts).find("no next step") != std::string::npos;
  passed += build_dialog_prompt({IntentKind::PreviousStep, {}}, r, first, {}, "q", opts).find("no previous step") != std::string::npos;
  return {passed == total && total == 28, std::to_string(passed) + "/" + std::to_string(total) + " cases exact"};
}

Outcome isolation_under_latency() {
  ServiceBackends backends = ServiceBackends::mocks();
  backends.chat = std::make_shared<EchoChat>("mock:echo", 5000, 10000);
  SessionManager manager(default_service_config(), backends);
  HttpServer server(manager);
  const int port = server.start("127.0.0.1", 0);
  auto client = [port] {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(std::chrono::seconds(30));
    return c;
  };
  auto created = client().Post("/v1/sessions", R"({"recipe_id":"pinwheel"})", "application/json");
  if (!created || created->status != 201) return {false, "session creation failed"};
  const std::string base = "/v1/sessions/" + json::parse(created->body)["session_id"].get<std::string>();

  std::atomic<bool> stop{false};
  std::atomic<int> chats_done{0};
  std::vector<std::thread> chatters;
  for (int i = 0; i < 4; ++i) {
    chatters.emplace_back([&] {
      auto c = client();
      c.Post(base + "/chat", R"({"text":"what is the next step"})", "application/json");
      ++chats_done;
    });
  }
  std::atomic<std::size_t> ingested{0};
  std::thread ingest([&] {
    auto c = client();
    const auto records = read_caption_file(tg_test::pinwheel_captions_path());
    std::uint64_t i = 0;
    while (!stop && i < records.size()) {
      const auto& rec = records[i];
      auto res = c.Post(base + "/captions", json{{"frame_index", rec.frame_index}, {"text", rec.text}}.dump(),
                        "application/json");
      if (res && res->status == 202) ++ingested;
      i += 8;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
  });

  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  auto poller = client();
  std::vector<double> latencies;
  bool all_ok = true;
  for (int i = 0; i < 200; ++i) {
    const auto t0 = Clock::now();
    auto res = poller.Get(base + "/state");
    latencies.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    all_ok = all_ok && res && res->status == 200;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  const int chats_pending = 4 - chats_done.load();
  stop = true;
  ingest.join();
  for (auto& t : chatters) t.join();
  server.stop();

  std::sort(latencies.begin(), latencies.end());
  const double p99 = latencies[static_cast<std::size_t>(std::ceil(0.99 * latencies.size())) - 1];
  const bool ok = all_ok && p99 < 50.0 && chats_pending > 0 && ingested > 0;
  return {ok, "p99 " + fmt(p99) + " ms, max " + fmt(latencies.back()) + " ms over 200 reads; " +
                  std::to_string(chats_pending) + " chats still waiting on the backend, " +
                  std::to_string(ingested.load()) + " captions ingested meanwhile"};
}

Outcome smoke() {
  const auto start = Clock::now();
  const int status = std::system((std::string("\"") + TASKGUIDE_EXE + "\" smoke > /dev/null 2>&1").c_str());
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  const bool exited_zero = status != -1 && WIFEXITED(status) && WEXITSTATUS(status) == 0;
  return {exited_zero && secs < 60.0, std::string("exit ") + (exited_zero ? "0" : "nonzero") + " in " + fmt(secs) + " s"};
}

}  // namespace

int main() {
  criterion("similarity core matches the dot/norm oracle", similarity_core);
  criterion("evaluation matches brute-force oracles", evaluation_oracle);
  criterion("13-step comparison table with weighted-mean invariant", table_shape);
  criterion("rule-mock enhancement beats raw captions at medium", enhancement_direction);
  criterion("best enhanced granularity is flagged", granularity_flag);
  criterion("real-time cadence at stride 8 / 30 fps over 60 s", cadence);
  criterion("HTTP replay estimates equal offline estimates", online_offline);
  criterion("next/previous dialog prompts pin the adjacent step", dialog_contracts);
  criterion("state reads stay fast under a 5 s chat delay", isolation_under_latency);
  criterion("taskguide smoke exits 0 within 60 s", smoke);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
