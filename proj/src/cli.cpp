#include "taskguide/cli.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "taskguide/dialog.hpp"
#include "taskguide/enhancer.hpp"
#include "taskguide/error.hpp"
#include "taskguide/eval.hpp"
#include "taskguide/http_backends.hpp"
#include "taskguide/mock_backends.hpp"
#include "taskguide/service.hpp"

namespace taskguide {

using nlohmann::json;

std::filesystem::path bundled_path(const std::filesystem::path& relative) {
  return std::filesystem::path(TASKGUIDE_SOURCE_DIR) / relative;
}

std::vector<std::string> replay_offline(const ReplayOptions& options, const Recipe& recipe,
                                        EmbedBackend& embedder) {
  ReplayStream stream(options.session_file, options.cadence, options.pacing);
  StateEstimator estimator(std::make_shared<const Recipe>(recipe), options.granularity, embedder,
                           options.smoothing);
  std::vector<std::string> out;
  std::int64_t seq = 0;
  while (auto event = stream.next()) out.push_back(to_json(estimator.observe(event->text, seq++)).dump());
  return out;
}

namespace {

json expect_json(const httplib::Result& res, int status, const std::string& what) {
  if (!res) throw BackendError(what + ": " + httplib::to_string(res.error()));
  if (res->status != status) {
    throw ProtocolError(what + ": HTTP " + std::to_string(res->status) + " " + res->body, res->status);
  }
  try {
    return json::parse(res->body);
  } catch (const json::exception& e) {
    throw ProtocolError(what + ": response is not JSON", res->status);
  }
}

}  // namespace

std::vector<std::string> replay_http(const ReplayOptions& options, const std::string& recipe_id,
                                     const std::string& base_url) {
  httplib::Client client(base_url);
  client.set_connection_timeout(std::chrono::seconds(5));
  client.set_read_timeout(std::chrono::seconds(120));

  const json create = {{"recipe_id", recipe_id},
                       {"options",
                        {{"granularity", to_string(options.granularity)},
                         {"window_size", options.smoothing.window_size},
                         {"forward_bias", options.smoothing.forward_bias}}}};
  const json session =
      expect_json(client.Post("/v1/sessions", create.dump(), "application/json"), 201, "create session");
  const std::string base = "/v1/sessions/" + session.at("session_id").get<std::string>();

  ReplayStream stream(options.session_file, options.cadence, options.pacing);
  std::size_t posted = 0;
  while (auto event = stream.next()) {
    json body = {{"frame_index", event->frame_index},
                 {"text", event->text},
                 {"timestamp_ms", event->timestamp_ms},
                 {"source", "replay"}};
    if (event->ground_truth_step) body["step"] = *event->ground_truth_step;
    expect_json(client.Post(base + "/captions", body.dump(), "application/json"), 202, "post caption");
    ++posted;
  }

  std::vector<std::string> estimates;
  FrameDecoder decoder;
  std::optional<std::string> failure;
  if (posted > 0) {
    auto res = client.Get(base + "/events?from_seq=0", [&](const char* data, std::size_t len) {
      decoder.feed(std::string_view(data, len));
      try {
        while (auto frame = decoder.next()) {
          const std::string kind = frame->value("kind", "");
          if (kind == "Overflow") {
            failure = "event stream overflowed";
            return false;
          }
          if (kind == "Estimate") estimates.push_back(frame->at("payload").dump());
        }
      } catch (const ParseError& e) {
        failure = e.what();
        return false;
      }
      return estimates.size() < posted;
    });
    if (failure) throw ProtocolError("event stream: " + *failure);
    if (estimates.size() < posted) {
      throw ProtocolError("event stream ended after " + std::to_string(estimates.size()) + " of " +
                          std::to_string(posted) + " estimates");
    }
  }
  client.Post(base + "/close", "", "application/json");
  return estimates;
}

namespace {

template <typename T>
bool report_check(std::vector<SmokeCheck>& checks, std::ostream& log, std::string name, T&& fn) {
  SmokeCheck c{std::move(name), false, {}};
  try {
    c.detail = fn();
    c.passed = c.detail.empty() || c.detail.rfind("FAIL", 0) != 0;
    if (!c.passed) c.detail = c.detail.substr(4);
  } catch (const std::exception& e) {
    c.detail = std::string("exception: ") + e.what();
  }
  log << (c.passed ? "[ok]   " : "[FAIL] ") << c.name;
  if (!c.detail.empty()) log << ": " << c.detail;
  log << '\n';
  checks.push_back(c);
  return c.passed;
}

std::string fail(const std::string& why) { return "FAIL" + why; }

}  // namespace

std::vector<SmokeCheck> run_smoke(std::ostream& log) {
  std::vector<SmokeCheck> checks;
  const auto started = std::chrono::steady_clock::now();
  const auto recipe_path = bundled_path("fixtures/pinwheel.json");
  const auto corpus_path = bundled_path("fixtures/pinwheel_captions.jsonl");

  Recipe recipe;
  LabeledCorpus corpus;
  TrigramEmbedder embedder;
  RuleChat rule;
  const TemplateRegistry templates = TemplateRegistry::load_directory(bundled_path("config/templates"));

  report_check(checks, log, "recipe loads and validates", [&] {
    recipe = load_recipe(recipe_path);
    const auto violations = validate_recipe(recipe);
    if (!violations.empty()) return fail(violations.front().message);
    return std::to_string(recipe.size()) + " steps";
  });
  report_check(checks, log, "labeled corpus loads", [&] {
    corpus = load_labeled_corpus(corpus_path, recipe.id);
    validate_corpus(corpus, recipe);
    if (corpus.events.empty()) return fail("corpus is empty");
    return std::to_string(corpus.events.size()) + " captions";
  });

  std::vector<EnhancedCaption> enhanced;
  report_check(checks, log, "batch enhancement with the rule mock", [&] {
    std::vector<CaptionEvent> events;
    for (const LabeledEvent& e : corpus.events) {
      CaptionEvent ce;
      ce.frame_index = e.frame_index;
      ce.text = e.text;
      events.push_back(std::move(ce));
    }
    EnhancementContext ctx{&recipe, &templates};
    enhanced = batch_enhance(ctx, events, rule, 4);
    for (std::size_t i = 0; i < enhanced.size(); ++i) {
      if (enhanced[i].source_seq != i) return fail("output order differs from input order");
      if (enhanced[i].fallback) return fail("caption " + std::to_string(i) + " fell back");
      corpus.events[i].enhanced = enhanced[i].enhanced_text;
    }
    const std::size_t probe = std::min<std::size_t>(200, events.size());
    const auto again = batch_enhance(ctx, std::span(events).first(probe), rule, 2);
    for (std::size_t i = 0; i < probe; ++i) {
      if (again[i].enhanced_text != enhanced[i].enhanced_text ||
          again[i].prompt_fingerprint != enhanced[i].prompt_fingerprint) {
        return fail("enhancement is not deterministic at item " + std::to_string(i));
      }
    }
    return std::to_string(enhanced.size()) + " captions enhanced";
  });

  std::vector<EvalReport> reports;
  report_check(checks, log, "step-wise similarity table", [&] {
    ReferenceCache cache;
    for (Pipeline p : {Pipeline::Raw, Pipeline::Enhanced}) {
      for (Granularity g : kAllGranularities) {
        reports.push_back(evaluate_similarity(corpus, recipe, g, embedder, p, Against::Truth, &cache));
      }
    }
    for (const EvalReport& r : reports) {
      if (std::abs(weighted_mean(r.per_step) - r.overall_mean) > 1e-12) {
        return fail("weighted-mean invariant broken for " + std::string(to_string(r.pipeline)) + "/" +
                    std::string(to_string(r.granularity)));
      }
    }
    const ComparisonTable table = stepwise_report(reports, recipe.size());
    if (table.rows.size() != 6 || table.step_count != recipe.size()) return fail("unexpected table shape");
    return "best enhanced granularity: " + std::string(to_string(*table.best_enhanced_granularity));
  });
  report_check(checks, log, "enhanced beats raw at medium", [&] {
    const ComparisonTable table = stepwise_report(reports, recipe.size());
    const auto* raw = table.find(Pipeline::Raw, Granularity::Medium);
    const auto* enh = table.find(Pipeline::Enhanced, Granularity::Medium);
    std::ostringstream os;
    os << "raw " << raw->overall << ", enhanced " << enh->overall;
    return enh->overall > raw->overall ? os.str() : fail(os.str());
  });
  report_check(checks, log, "CSV export round-trips", [&] {
    const auto back = reports_from_csv(report_to_csv(reports));
    if (back.size() != reports.size()) return fail("report count changed");
    for (std::size_t i = 0; i < back.size(); ++i) {
      if (back[i].per_step.size() != reports[i].per_step.size()) return fail("step rows changed");
      for (std::size_t s = 0; s < back[i].per_step.size(); ++s) {
        if (std::abs(back[i].per_step[s].mean - reports[i].per_step[s].mean) > 5e-7 ||
            back[i].per_step[s].count != reports[i].per_step[s].count) {
          return fail("value changed beyond CSV precision");
        }
      }
    }
    return std::string{};
  });
  report_check(checks, log, "W=1 accuracy equals per-caption argmax", [&] {
    SmoothingConfig w1;
    w1.window_size = 1;
    const AccuracyReport acc = classification_accuracy(corpus, recipe, Granularity::Medium, embedder, w1);
    const auto refs = embed_references(recipe, Granularity::Medium, embedder);
    std::size_t correct = 0;
    for (const LabeledEvent& e : corpus.events) {
      const auto scores = score_steps(trigram_embedding(e.text), refs);
      if (static_cast<std::size_t>(argmax_lowest(scores)) == e.step) ++correct;
    }
    if (correct != acc.correct) {
      return fail(std::to_string(acc.correct) + " vs oracle " + std::to_string(correct));
    }
    std::ostringstream os;
    os << "accuracy " << acc.accuracy;
    return os.str();
  });
  report_check(checks, log, "dialog prompts pin next/previous steps", [&] {
    DialogPromptOptions opts{&templates};
    for (std::size_t i = 0; i < recipe.size(); ++i) {
      StepEstimate est = initial_estimate(recipe.size());
      est.step_index = i;
      for (IntentKind k : {IntentKind::NextStep, IntentKind::PreviousStep}) {
        const std::size_t want = k == IntentKind::NextStep ? std::min(i + 1, recipe.size() - 1) : (i == 0 ? 0 : i - 1);
        const std::string prompt = build_dialog_prompt({k, std::nullopt}, recipe, est, {}, "?", opts);
        const std::string pin = "Target step: Step " + std::to_string(want + 1) + " (";
        if (prompt.find(pin) == std::string::npos) {
          return fail("step " + std::to_string(i) + " " + std::string(to_string(k)));
        }
      }
    }
    return std::string{};
  });

  report_check(checks, log, "service over HTTP", [&] {
    SessionManager manager(default_service_config(), ServiceBackends::mocks());
    HttpServer server(manager);
    const int port = server.start("127.0.0.1", 0);
    const std::string url = "http://127.0.0.1:" + std::to_string(port);

    ReplayOptions ro;
    ro.session_file = corpus_path;
    const auto offline = replay_offline(ro, recipe, embedder);
    const auto online = replay_http(ro, recipe.id, url);
    if (online != offline) return fail("HTTP estimates differ from the offline run");

    httplib::Client client(url);
    client.set_read_timeout(std::chrono::seconds(30));
    const json s = expect_json(client.Post("/v1/sessions", R"({"recipe_id":"pinwheel"})", "application/json"),
                               201, "create");
    const std::string base = "/v1/sessions/" + s.at("session_id").get<std::string>();
    expect_json(client.Post(base + "/captions", R"({"frame_index":16,"text":"C spreads butter on the tortilla"})",
                            "application/json"),
                202, "caption");
    auto regressed = client.Post(base + "/captions", R"({"frame_index":8,"text":"C picks up the knife"})",
                                 "application/json");
    if (!regressed || regressed->status != 409) return fail("regressed frame was not rejected with 409");

    const json by_text = expect_json(
        client.Post(base + "/chat", R"({"text":"what is the next step","speak":true})", "application/json"),
        200, "chat");
    const json audio_req = {{"audio", base64_encode("ask_next")}, {"sample_rate_hz", 16000}};
    const json by_audio =
        expect_json(client.Post(base + "/chat", audio_req.dump(), "application/json"), 200, "audio chat");
    if (by_audio.value("transcript", "") != "what is the next step") return fail("ASR transcript mismatch");
    if (by_audio["intent"] != by_text["intent"]) return fail("audio and text intents differ");
    auto audio = client.Get(by_text["audio"]["url"].get<std::string>());
    if (!audio || audio->status != 200) return fail("reply audio missing");
    if (mock_audio_text(audio->body) != by_text["assistant_text"].get<std::string>()) {
      return fail("reply audio does not carry the reply text");
    }

    expect_json(client.Post(base + "/close", "", "application/json"), 200, "close");
    auto closed = client.Post(base + "/captions", R"({"frame_index":24,"text":"C rolls the tortilla"})",
                              "application/json");
    if (!closed || closed->status != 410) return fail("closed session accepted a caption");

    std::uint64_t expected = 0;
    FrameDecoder decoder;
    bool gapless = true;
    client.Get(base + "/events?from_seq=0", [&](const char* data, std::size_t len) {
      decoder.feed(std::string_view(data, len));
      while (auto f = decoder.next()) gapless = gapless && f->at("seq").get<std::uint64_t>() == expected++;
      return true;
    });
    server.stop();
    if (!gapless || expected == 0) return fail("event stream has gaps");
    return std::to_string(online.size()) + " estimates identical; " + std::to_string(expected) +
           " frames in the closed session";
  });

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  report_check(checks, log, "finished within 60 s", [&] {
    std::ostringstream os;
    os << seconds << " s";
    return seconds < 60.0 ? os.str() : fail(os.str());
  });
  return checks;
}

namespace {

Granularity granularity_arg(const std::string& s) {
  auto g = parse_granularity(s);
  if (!g) throw InputError("unknown granularity '" + s + "'");
  return *g;
}

BackendRegistry registry_from(const std::string& config_path) {
  if (config_path.empty()) return ServiceConfig::load(bundled_path("config/taskguide.json")).backends;
  return ServiceConfig::load(config_path).backends;
}

BackendConfig chat_config(const BackendRegistry& reg, const std::string& id, std::optional<std::uint64_t> seed) {
  BackendConfig cfg = id.empty() ? reg.for_role("enhance", "mock:rule") : reg.resolve(id);
  if (seed && cfg.is_mock()) cfg.options["seed"] = *seed;
  return cfg;
}

struct EvalArgs {
  std::string corpus = bundled_path("fixtures/pinwheel_captions.jsonl").string();
  std::string recipe = bundled_path("fixtures/pinwheel.json").string();
  std::string config;
  std::string granularity = "medium";
  std::string pipeline = "raw";
  std::string against = "truth";
  std::string format = "table";
  std::string embedder;
  std::string enhance_with;
  std::string out;
  bool accuracy = false;
  std::size_t window = 15;
  double bias = 0.0;
};

int run_eval(const EvalArgs& a, std::ostream& out) {
  const Recipe recipe = load_recipe(a.recipe);
  LabeledCorpus corpus = load_labeled_corpus(a.corpus, recipe.id);
  const BackendRegistry reg = registry_from(a.config);
  auto embedder = make_embed_backend(a.embedder.empty() ? reg.for_role("embed", "mock:trigram")
                                                        : reg.resolve(a.embedder));
  const auto format = parse_report_format(a.format);
  const auto against = parse_against(a.against);
  if (!format) throw InputError("unknown format '" + a.format + "'");
  if (!against) throw InputError("unknown --against mode '" + a.against + "'");

  std::vector<Granularity> grans;
  if (a.granularity == "all") {
    grans.assign(kAllGranularities.begin(), kAllGranularities.end());
  } else {
    grans.push_back(granularity_arg(a.granularity));
  }
  std::vector<Pipeline> pipes;
  if (a.pipeline == "both") {
    pipes = {Pipeline::Raw, Pipeline::Enhanced};
  } else if (auto p = parse_pipeline(a.pipeline)) {
    pipes = {*p};
  } else {
    throw InputError("unknown pipeline '" + a.pipeline + "'");
  }

  const bool needs_enhanced =
      std::find(pipes.begin(), pipes.end(), Pipeline::Enhanced) != pipes.end() && !corpus.has_enhanced();
  if (needs_enhanced) {
    auto chat = make_chat_backend(chat_config(reg, a.enhance_with, std::nullopt));
    const TemplateRegistry templates = TemplateRegistry::load_directory(bundled_path("config/templates"));
    std::vector<CaptionEvent> events;
    for (const LabeledEvent& e : corpus.events) {
      CaptionEvent ce;
      ce.frame_index = e.frame_index;
      ce.text = e.text;
      events.push_back(std::move(ce));
    }
    const auto enhanced = batch_enhance(EnhancementContext{&recipe, &templates}, events, *chat, 4);
    for (std::size_t i = 0; i < enhanced.size(); ++i) {
      corpus.events[i].enhanced = enhanced[i].enhanced_text;
      corpus.events[i].fallback = enhanced[i].fallback;
    }
  }

  ReferenceCache cache;
  std::vector<EvalReport> reports;
  for (Pipeline p : pipes) {
    for (Granularity g : grans) {
      reports.push_back(evaluate_similarity(corpus, recipe, g, *embedder, p, *against, &cache));
    }
  }

  std::string text;
  if (reports.size() == 1) {
    text = format_report(reports.front(), *format);
  } else {
    text = format_comparison(stepwise_report(reports, recipe.size()), reports, *format);
  }
  if (a.accuracy) {
    SmoothingConfig sm{a.window, a.bias};
    sm.validate();
    for (Pipeline p : pipes) {
      for (Granularity g : grans) {
        const AccuracyReport acc = classification_accuracy(corpus, recipe, g, *embedder, sm, p, &cache);
        text += *format == ReportFormat::Json ? to_json(acc).dump(2) + "\n" : "\n" + render_accuracy(acc);
      }
    }
  }
  if (a.out.empty()) {
    out << text;
  } else {
    write_text_file(a.out, text);
    out << "wrote " << a.out << '\n';
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Task guidance engine: caption ingestion, enhancement, step estimation and dialog", "taskguide"};
  app.require_subcommand(1);

  std::string config_path;
  int port = -1;
  std::string host;
  std::string journal_dir;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--config", config_path, "Service config file")->check(CLI::ExistingFile);
  serve->add_option("--port", port, "Listen port (overrides the config)");
  serve->add_option("--host", host, "Listen address (overrides the config)");
  serve->add_option("--journal-dir", journal_dir, "Write per-session event journals here");

  std::string session_file;
  std::string rate = "max";
  std::string server_url;
  std::string replay_recipe = bundled_path("fixtures/pinwheel.json").string();
  std::string replay_out;
  std::string replay_granularity = "medium";
  std::size_t replay_window = 15;
  double replay_bias = 0.0;
  double fps = 30.0;
  std::uint64_t stride = 8;
  auto* replay = app.add_subcommand("replay", "Replay a caption file through the estimator");
  replay->add_option("--session-file", session_file, "Caption JSONL file")->required()->check(CLI::ExistingFile);
  replay->add_option("--rate", rate, "realtime or max")->check(CLI::IsMember({"realtime", "max"}));
  replay->add_option("--server", server_url, "Replay against a running service (http://host:port)");
  replay->add_option("--recipe", replay_recipe, "Recipe JSON file")->check(CLI::ExistingFile);
  replay->add_option("--granularity", replay_granularity, "Reference granularity");
  replay->add_option("--window", replay_window, "Smoothing window (captions)");
  replay->add_option("--bias", replay_bias, "Forward bias added to later steps");
  replay->add_option("--fps", fps, "Source frame rate");
  replay->add_option("--stride", stride, "Frames per caption");
  replay->add_option("--out", replay_out, "Write estimates (JSONL) here instead of stdout");

  std::string enh_in;
  std::string enh_out;
  std::string enh_recipe = bundled_path("fixtures/pinwheel.json").string();
  std::string enh_config;
  std::string enh_chat;
  std::size_t enh_in_flight = 4;
  std::size_t enh_window = kDefaultEnhanceWindow;
  std::string enh_context = "medium";
  std::optional<std::uint64_t> enh_seed;
  auto* enhance = app.add_subcommand("enhance", "Rewrite raw captions with the chat backend");
  enhance->add_option("--in", enh_in, "Input caption JSONL")->required()->check(CLI::ExistingFile);
  enhance->add_option("--out", enh_out, "Output caption JSONL")->required();
  enhance->add_option("--recipe", enh_recipe, "Recipe JSON file")->check(CLI::ExistingFile);
  enhance->add_option("--config", enh_config, "Backends config file")->check(CLI::ExistingFile);
  enhance->add_option("--chat", enh_chat, "Chat backend id (default: the config's enhance role)");
  enhance->add_option("--max-in-flight", enh_in_flight, "Concurrent requests")->check(CLI::PositiveNumber);
  enhance->add_option("--window", enh_window, "Earlier captions shown in the prompt")->check(CLI::PositiveNumber);
  enhance->add_option("--context", enh_context, "Granularity of the recipe in the prompt");
  enhance->add_option("--seed", enh_seed, "Seed for randomized mock backends");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Similarity and step-classification reports");
  eval->add_option("--corpus", ev.corpus, "Labeled caption JSONL")->check(CLI::ExistingFile);
  eval->add_option("--recipe", ev.recipe, "Recipe JSON file")->check(CLI::ExistingFile);
  eval->add_option("--config", ev.config, "Backends config file")->check(CLI::ExistingFile);
  eval->add_option("--granularity", ev.granularity, "short, medium, long or all")
      ->check(CLI::IsMember({"short", "medium", "long", "all"}));
  eval->add_option("--pipeline", ev.pipeline, "raw, enhanced or both")
      ->check(CLI::IsMember({"raw", "enhanced", "both"}));
  eval->add_option("--against", ev.against, "truth or argmax")->check(CLI::IsMember({"truth", "argmax"}));
  eval->add_option("--format", ev.format, "table, csv or json")->check(CLI::IsMember({"table", "csv", "json"}));
  eval->add_option("--embedder", ev.embedder, "Embedding backend id");
  eval->add_option("--enhance-with", ev.enhance_with, "Chat backend for corpora without enhanced text");
  eval->add_option("--out", ev.out, "Write the report here instead of stdout");
  eval->add_flag("--accuracy", ev.accuracy, "Also report smoothed step-classification accuracy");
  eval->add_option("--window", ev.window, "Smoothing window for --accuracy")->check(CLI::PositiveNumber);
  eval->add_option("--bias", ev.bias, "Forward bias for --accuracy");

  auto* smoke = app.add_subcommand("smoke", "End-to-end check on the bundled fixture with mock backends");

  if (argc <= 1) {
    err << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (*serve) {
      ServiceConfig cfg = config_path.empty() ? default_service_config() : ServiceConfig::load(config_path);
      if (port >= 0) cfg.port = port;
      if (!host.empty()) cfg.host = host;
      if (!journal_dir.empty()) cfg.journal_dir = journal_dir;
      ServiceBackends backends = ServiceBackends::from_registry(cfg.backends);
      const std::string h = cfg.host;
      const int p = cfg.port;
      SessionManager manager(std::move(cfg), std::move(backends));
      HttpServer server(manager);
      out << "serving on http://" << h << ":" << p << std::endl;
      server.run(h, p);
      return 0;
    }
    if (*replay) {
      ReplayOptions ro;
      ro.session_file = session_file;
      ro.cadence = CadencePolicy{fps, stride};
      ro.cadence.validate();
      ro.pacing = rate == "realtime" ? Pacing::RealTime : Pacing::AsFastAsPossible;
      ro.granularity = granularity_arg(replay_granularity);
      ro.smoothing = SmoothingConfig{replay_window, replay_bias};
      ro.smoothing.validate();
      const Recipe recipe = load_recipe(replay_recipe);
      std::vector<std::string> lines;
      if (server_url.empty()) {
        TrigramEmbedder embedder;
        lines = replay_offline(ro, recipe, embedder);
      } else {
        lines = replay_http(ro, recipe.id, server_url);
      }
      std::string text;
      for (const auto& l : lines) text += l + "\n";
      if (replay_out.empty()) {
        out << text;
      } else {
        write_text_file(replay_out, text);
        out << "wrote " << lines.size() << " estimates to " << replay_out << '\n';
      }
      return 0;
    }
    if (*enhance) {
      const Recipe recipe = load_recipe(enh_recipe);
      const TemplateRegistry templates = TemplateRegistry::load_directory(bundled_path("config/templates"));
      auto chat = make_chat_backend(chat_config(registry_from(enh_config), enh_chat, enh_seed));
      auto records = read_caption_file(enh_in);
      std::vector<CaptionEvent> events;
      for (const CaptionRecord& r : records) {
        CaptionEvent e;
        e.frame_index = r.frame_index;
        e.text = r.text;
        events.push_back(std::move(e));
      }
      EnhancementContext ctx{&recipe, &templates, granularity_arg(enh_context)};
      ctx.window_size = enh_window;
      const auto enhanced = batch_enhance(ctx, events, *chat, enh_in_flight);
      std::string text;
      std::size_t fallbacks = 0;
      for (std::size_t i = 0; i < records.size(); ++i) {
        records[i].enhanced = enhanced[i].enhanced_text;
        records[i].fallback = enhanced[i].fallback;
        fallbacks += enhanced[i].fallback ? 1 : 0;
        text += format_caption_record(records[i]) + "\n";
      }
      write_text_file(enh_out, text);
      out << "enhanced " << records.size() << " captions (" << fallbacks << " fallbacks) with "
          << chat->id() << " -> " << enh_out << '\n';
      return 0;
    }
    if (*eval) return run_eval(ev, out);
    if (*smoke) {
      const auto checks = run_smoke(out);
      const bool ok = std::all_of(checks.begin(), checks.end(), [](const SmokeCheck& c) { return c.passed; });
      out << (ok ? "smoke: all checks passed" : "smoke: FAILED") << '\n';
      return ok ? 0 : 1;
    }
  } catch (const Error& e) {
    err << "taskguide: " << e.kind() << " error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "taskguide: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace taskguide
