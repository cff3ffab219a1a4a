#include "taskguide/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "taskguide/caption.hpp"
#include "taskguide/error.hpp"
#include "taskguide/hashing.hpp"

namespace taskguide {

using nlohmann::json;

std::string_view to_string(Pipeline p) { return p == Pipeline::Raw ? "raw" : "enhanced"; }
std::string_view to_string(Against a) { return a == Against::Truth ? "truth" : "argmax"; }
std::string_view to_string(ReportFormat f) {
  switch (f) {
    case ReportFormat::Table:
      return "table";
    case ReportFormat::Csv:
      return "csv";
    case ReportFormat::Json:
      break;
  }
  return "json";
}

std::optional<Pipeline> parse_pipeline(std::string_view s) {
  if (s == "raw") return Pipeline::Raw;
  if (s == "enhanced") return Pipeline::Enhanced;
  return std::nullopt;
}

std::optional<Against> parse_against(std::string_view s) {
  if (s == "truth") return Against::Truth;
  if (s == "argmax") return Against::Argmax;
  return std::nullopt;
}

std::optional<ReportFormat> parse_report_format(std::string_view s) {
  if (s == "table") return ReportFormat::Table;
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  return std::nullopt;
}

bool LabeledCorpus::has_enhanced() const {
  return !events.empty() &&
         std::all_of(events.begin(), events.end(), [](const LabeledEvent& e) { return e.enhanced.has_value(); });
}

std::string LabeledCorpus::fingerprint() const {
  std::string buf = recipe_id;
  for (const LabeledEvent& e : events) {
    buf += '\x1e' + std::to_string(e.frame_index) + '\x1f' + e.text + '\x1f' + std::to_string(e.step);
  }
  return fingerprint_hex(buf);
}

const std::string& LabeledCorpus::text(std::size_t i, Pipeline pipeline) const {
  const LabeledEvent& e = events.at(i);
  if (pipeline == Pipeline::Raw) return e.text;
  if (!e.enhanced) {
    throw InputError("event " + std::to_string(i) + " (frame " + std::to_string(e.frame_index) +
                     ") has no enhanced text");
  }
  return *e.enhanced;
}

LabeledCorpus load_labeled_corpus(const std::filesystem::path& path, std::string recipe_id) {
  LabeledCorpus corpus;
  corpus.recipe_id = std::move(recipe_id);
  std::size_t line = 0;
  for (CaptionRecord& rec : read_caption_file(path)) {
    ++line;
    if (!rec.step) {
      throw InputError(path.string() + ": record " + std::to_string(line) + " has no step label");
    }
    corpus.events.push_back({rec.frame_index, std::move(rec.text), *rec.step, std::move(rec.enhanced),
                             rec.fallback});
  }
  return corpus;
}

void validate_corpus(const LabeledCorpus& corpus, const Recipe& recipe) {
  for (std::size_t i = 0; i < corpus.events.size(); ++i) {
    if (corpus.events[i].step >= recipe.size()) {
      throw InputError("event " + std::to_string(i) + " is labeled step " +
                       std::to_string(corpus.events[i].step) + " but recipe '" + recipe.id +
                       "' has " + std::to_string(recipe.size()) + " steps");
    }
  }
}

double weighted_mean(std::span<const StepStat> per_step) {
  std::vector<double> weighted;
  std::vector<double> counts;
  for (const StepStat& s : per_step) {
    weighted.push_back(static_cast<double>(s.count) * s.mean);
    counts.push_back(static_cast<double>(s.count));
  }
  const double n = pairwise_sum(counts);
  return n > 0.0 ? pairwise_sum(weighted) / n : 0.0;
}

std::string config_fingerprint(std::string_view embedder_id, std::string_view recipe_id,
                               std::string_view smoothing, Against against) {
  std::string buf = "embedder=" + std::string(embedder_id) + ";recipe=" + std::string(recipe_id) +
                    ";smoothing=" + std::string(smoothing) + ";against=" + std::string(to_string(against));
  return fingerprint_hex(buf);
}

namespace {

constexpr std::size_t kEmbedBatch = 256;

/// Embeds each distinct text once; returns one row per input text.
std::vector<EmbeddingVector> embed_texts(const std::vector<const std::string*>& texts,
                                         EmbedBackend& backend) {
  std::unordered_map<std::string_view, std::size_t> slot;
  std::vector<std::string> unique;
  std::vector<std::size_t> index(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto [it, inserted] = slot.emplace(*texts[i], unique.size());
    if (inserted) unique.push_back(*texts[i]);
    index[i] = it->second;
  }
  std::vector<EmbeddingVector> unique_vecs;
  unique_vecs.reserve(unique.size());
  for (std::size_t from = 0; from < unique.size(); from += kEmbedBatch) {
    const std::size_t n = std::min(kEmbedBatch, unique.size() - from);
    auto batch = embed_batch(backend, std::span<const std::string>(unique.data() + from, n));
    for (auto& v : batch) unique_vecs.push_back(std::move(v));
  }
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (std::size_t i : index) out.push_back(unique_vecs[i]);
  return out;
}

std::vector<const std::string*> corpus_texts(const LabeledCorpus& corpus, Pipeline pipeline) {
  std::vector<const std::string*> texts;
  texts.reserve(corpus.events.size());
  for (std::size_t i = 0; i < corpus.events.size(); ++i) texts.push_back(&corpus.text(i, pipeline));
  return texts;
}

std::string smoothing_tag(const SmoothingConfig& s) {
  return "window=" + std::to_string(s.window_size) + ",bias=" + std::to_string(s.forward_bias);
}

}  // namespace

EvalReport evaluate_similarity(const LabeledCorpus& corpus, const Recipe& recipe, Granularity g,
                               EmbedBackend& embedder, Pipeline pipeline, Against against,
                               ReferenceCache* cache) {
  validate_corpus(corpus, recipe);
  EvalReport report;
  report.pipeline = pipeline;
  report.granularity = g;
  report.against = against;
  report.embedder_id = embedder.id();
  report.recipe_id = recipe.id;
  report.config_fingerprint = config_fingerprint(embedder.id(), recipe.id, "none", against);
  report.corpus_fingerprint = corpus.fingerprint();
  if (corpus.events.empty()) return report;

  const auto texts = corpus_texts(corpus, pipeline);
  const auto captions = embed_texts(texts, embedder);
  std::shared_ptr<const EmbeddingMatrix<double>> refs =
      cache != nullptr ? cache->get(recipe, g, embedder)
                       : std::make_shared<const EmbeddingMatrix<double>>(embed_references(recipe, g, embedder));

  std::vector<std::vector<double>> by_step(recipe.size());
  std::vector<double> all;
  all.reserve(corpus.events.size());
  for (std::size_t i = 0; i < corpus.events.size(); ++i) {
    double sim = 0.0;
    if (against == Against::Truth) {
      sim = cosine_similarity(captions[i], refs->row(static_cast<Eigen::Index>(corpus.events[i].step)).transpose());
    } else {
      sim = score_steps(captions[i], *refs).maxCoeff();
    }
    by_step[corpus.events[i].step].push_back(sim);
    all.push_back(sim);
  }
  for (std::size_t s = 0; s < by_step.size(); ++s) {
    if (by_step[s].empty()) continue;
    report.per_step.push_back({s, by_step[s].size(), pairwise_mean(by_step[s])});
  }
  report.overall_mean = pairwise_mean(all);
  return report;
}

const ComparisonTable::Row* ComparisonTable::find(Pipeline p, Granularity g) const {
  for (const Row& r : rows) {
    if (r.pipeline == p && r.granularity == g) return &r;
  }
  return nullptr;
}

std::optional<ComparisonTable::Row> ComparisonTable::delta(Granularity g) const {
  const Row* raw = find(Pipeline::Raw, g);
  const Row* enh = find(Pipeline::Enhanced, g);
  if (raw == nullptr || enh == nullptr) return std::nullopt;
  Row d{Pipeline::Enhanced, g, std::vector<std::optional<double>>(step_count), enh->overall - raw->overall};
  for (std::size_t s = 0; s < step_count; ++s) {
    if (raw->cells[s] && enh->cells[s]) d.cells[s] = *enh->cells[s] - *raw->cells[s];
  }
  return d;
}

ComparisonTable stepwise_report(std::span<const EvalReport> reports, std::size_t step_count) {
  if (reports.empty()) throw ConsistencyError("stepwise_report: no reports");
  ComparisonTable t;
  t.step_count = step_count;
  t.config_fingerprint = reports.front().config_fingerprint;
  t.corpus_fingerprint = reports.front().corpus_fingerprint;
  t.counts.assign(step_count, 0);

  std::vector<const EvalReport*> ordered;
  for (const EvalReport& r : reports) ordered.push_back(&r);
  std::sort(ordered.begin(), ordered.end(), [](const EvalReport* a, const EvalReport* b) {
    return std::pair(a->pipeline, a->granularity) < std::pair(b->pipeline, b->granularity);
  });

  bool counts_set = false;
  for (const EvalReport* r : ordered) {
    if (r->config_fingerprint != t.config_fingerprint || r->corpus_fingerprint != t.corpus_fingerprint) {
      throw ConsistencyError("stepwise_report: reports come from different corpora or configurations");
    }
    if (t.find(r->pipeline, r->granularity) != nullptr) {
      throw ConsistencyError("stepwise_report: duplicate report for " + std::string(to_string(r->pipeline)) +
                             "/" + std::string(to_string(r->granularity)));
    }
    ComparisonTable::Row row{r->pipeline, r->granularity, std::vector<std::optional<double>>(step_count),
                             r->overall_mean};
    std::vector<std::size_t> counts(step_count, 0);
    for (const StepStat& s : r->per_step) {
      if (s.step >= step_count) {
        throw ConsistencyError("stepwise_report: step " + std::to_string(s.step) + " outside table");
      }
      row.cells[s.step] = s.mean;
      counts[s.step] = s.count;
    }
    if (!counts_set) {
      t.counts = counts;
      counts_set = true;
    } else if (counts != t.counts) {
      throw ConsistencyError("stepwise_report: per-step sample counts differ between reports");
    }
    t.rows.push_back(std::move(row));
  }

  t.column_best.resize(step_count);
  for (std::size_t s = 0; s < step_count; ++s) {
    std::optional<double> best;
    for (const auto& row : t.rows) {
      if (row.cells[s] && (!best || *row.cells[s] > *best)) best = row.cells[s];
    }
    if (!best) continue;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      if (t.rows[r].cells[s] && *t.rows[r].cells[s] == *best) t.column_best[s].push_back(r);
    }
  }

  auto best_for = [&](Pipeline p) -> std::optional<Granularity> {
    std::optional<Granularity> best;
    double best_value = 0.0;
    for (const auto& row : t.rows) {
      if (row.pipeline != p) continue;
      if (!best || row.overall > best_value) {
        best = row.granularity;
        best_value = row.overall;
      }
    }
    return best;
  };
  t.best_enhanced_granularity = best_for(Pipeline::Enhanced);
  t.best_raw_granularity = best_for(Pipeline::Raw);
  return t;
}

AccuracyReport classification_accuracy(const LabeledCorpus& corpus, const Recipe& recipe,
                                       Granularity g, EmbedBackend& embedder,
                                       const SmoothingConfig& smoothing, Pipeline pipeline,
                                       ReferenceCache* cache) {
  validate_corpus(corpus, recipe);
  for (std::size_t i = 1; i < corpus.events.size(); ++i) {
    if (corpus.events[i].frame_index <= corpus.events[i - 1].frame_index) {
      throw InputError("classification_accuracy: corpus is not in temporal order at event " +
                       std::to_string(i));
    }
  }
  AccuracyReport report;
  report.pipeline = pipeline;
  report.granularity = g;
  report.smoothing = smoothing;
  report.total = corpus.events.size();
  report.confusion.assign(recipe.size(), std::vector<std::size_t>(recipe.size(), 0));
  report.config_fingerprint =
      config_fingerprint(embedder.id(), recipe.id, smoothing_tag(smoothing), Against::Truth);
  if (corpus.events.empty()) return report;

  const auto captions = embed_texts(corpus_texts(corpus, pipeline), embedder);
  std::shared_ptr<const EmbeddingMatrix<double>> refs =
      cache != nullptr ? cache->get(recipe, g, embedder)
                       : std::make_shared<const EmbeddingMatrix<double>>(embed_references(recipe, g, embedder));
  StepSmoother smoother(smoothing);
  for (std::size_t i = 0; i < corpus.events.size(); ++i) {
    const StepEstimate est = smoother.update(score_steps(captions[i], *refs), static_cast<std::int64_t>(i));
    report.predictions.push_back(est.step_index);
    ++report.confusion[corpus.events[i].step][est.step_index];
    if (est.step_index == corpus.events[i].step) ++report.correct;
  }
  report.accuracy = static_cast<double>(report.correct) / static_cast<double>(report.total);
  return report;
}

json to_json(const EvalReport& r) {
  json steps = json::array();
  for (const StepStat& s : r.per_step) steps.push_back({{"step", s.step}, {"count", s.count}, {"mean", s.mean}});
  return json{{"pipeline", to_string(r.pipeline)},
              {"granularity", to_string(r.granularity)},
              {"against", to_string(r.against)},
              {"overall_mean", r.overall_mean},
              {"per_step", std::move(steps)},
              {"config_fingerprint", r.config_fingerprint},
              {"corpus_fingerprint", r.corpus_fingerprint},
              {"embedder_id", r.embedder_id},
              {"recipe_id", r.recipe_id}};
}

EvalReport eval_report_from_json(const json& j) {
  EvalReport r;
  try {
    auto p = parse_pipeline(j.at("pipeline").get<std::string>());
    auto g = parse_granularity(j.at("granularity").get<std::string>());
    auto a = parse_against(j.value("against", "truth"));
    if (!p || !g || !a) throw InputError("report has an unknown pipeline, granularity or against mode");
    r.pipeline = *p;
    r.granularity = *g;
    r.against = *a;
    r.overall_mean = j.at("overall_mean").get<double>();
    for (const json& s : j.at("per_step")) {
      r.per_step.push_back({s.at("step").get<std::size_t>(), s.at("count").get<std::size_t>(),
                            s.at("mean").get<double>()});
    }
    r.config_fingerprint = j.value("config_fingerprint", "");
    r.corpus_fingerprint = j.value("corpus_fingerprint", "");
    r.embedder_id = j.value("embedder_id", "");
    r.recipe_id = j.value("recipe_id", "");
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed report JSON: ") + e.what());
  }
  return r;
}

json to_json(const ComparisonTable& t) {
  json rows = json::array();
  for (const auto& row : t.rows) {
    json cells = json::array();
    for (const auto& c : row.cells) cells.push_back(c ? json(*c) : json(nullptr));
    rows.push_back({{"pipeline", to_string(row.pipeline)},
                    {"granularity", to_string(row.granularity)},
                    {"cells", std::move(cells)},
                    {"overall", row.overall}});
  }
  json deltas = json::object();
  for (Granularity g : kAllGranularities) {
    if (auto d = t.delta(g)) {
      json cells = json::array();
      for (const auto& c : d->cells) cells.push_back(c ? json(*c) : json(nullptr));
      deltas[std::string(to_string(g))] = {{"cells", std::move(cells)}, {"overall", d->overall}};
    }
  }
  json out{{"step_count", t.step_count},
           {"counts", t.counts},
           {"rows", std::move(rows)},
           {"column_best", t.column_best},
           {"deltas", std::move(deltas)},
           {"config_fingerprint", t.config_fingerprint},
           {"corpus_fingerprint", t.corpus_fingerprint}};
  out["best_enhanced_granularity"] =
      t.best_enhanced_granularity ? json(to_string(*t.best_enhanced_granularity)) : json(nullptr);
  out["best_raw_granularity"] = t.best_raw_granularity ? json(to_string(*t.best_raw_granularity)) : json(nullptr);
  return out;
}

json to_json(const AccuracyReport& r) {
  return json{{"pipeline", to_string(r.pipeline)},
              {"granularity", to_string(r.granularity)},
              {"window_size", r.smoothing.window_size},
              {"forward_bias", r.smoothing.forward_bias},
              {"total", r.total},
              {"correct", r.correct},
              {"accuracy", r.accuracy},
              {"confusion", r.confusion},
              {"config_fingerprint", r.config_fingerprint}};
}

namespace {

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(sep, pos);
    out.emplace_back(line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

constexpr std::string_view kCsvHeader = "pipeline,granularity,step,count,mean";

}  // namespace

std::string report_to_csv(std::span<const EvalReport> reports) {
  std::string out(kCsvHeader);
  out.push_back('\n');
  for (const EvalReport& r : reports) {
    for (const StepStat& s : r.per_step) {
      out += std::string(to_string(r.pipeline)) + ',' + std::string(to_string(r.granularity)) + ',' +
             std::to_string(s.step) + ',' + std::to_string(s.count) + ',' + fixed6(s.mean) + '\n';
    }
  }
  return out;
}

std::vector<EvalReport> reports_from_csv(std::string_view csv) {
  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw InputError("CSV report: unexpected header");
  std::vector<EvalReport> out;
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    const auto p = fields.size() == 5 ? parse_pipeline(fields[0]) : std::nullopt;
    const auto g = fields.size() == 5 ? parse_granularity(fields[1]) : std::nullopt;
    if (!p || !g) throw InputError("CSV report: malformed line " + std::to_string(line_number));
    StepStat stat;
    try {
      stat = {std::stoul(fields[2]), std::stoul(fields[3]), std::stod(fields[4])};
    } catch (const std::exception&) {
      throw InputError("CSV report: malformed number on line " + std::to_string(line_number));
    }
    auto it = std::find_if(out.begin(), out.end(), [&](const EvalReport& r) {
      return r.pipeline == *p && r.granularity == *g;
    });
    if (it == out.end()) {
      out.push_back({});
      it = std::prev(out.end());
      it->pipeline = *p;
      it->granularity = *g;
    }
    it->per_step.push_back(stat);
  }
  for (EvalReport& r : out) r.overall_mean = weighted_mean(r.per_step);
  return out;
}

std::string render_report_table(const EvalReport& r) {
  std::ostringstream os;
  os << "pipeline: " << to_string(r.pipeline) << "  granularity: " << to_string(r.granularity)
     << "  against: " << to_string(r.against) << "\n";
  os << "embedder: " << r.embedder_id << "  recipe: " << r.recipe_id
     << "  config: " << r.config_fingerprint << "  corpus: " << r.corpus_fingerprint << "\n\n";
  os << "| Step | #Samples | Mean similarity |\n|---|---|---|\n";
  std::size_t total = 0;
  for (const StepStat& s : r.per_step) {
    os << "| " << s.step << " | " << s.count << " | " << fixed6(s.mean) << " |\n";
    total += s.count;
  }
  os << "| overall | " << total << " | " << fixed6(r.overall_mean) << " |\n";
  return os.str();
}

std::string render_comparison_table(const ComparisonTable& t) {
  std::ostringstream os;
  auto cell = [](const std::optional<double>& v, bool bold) {
    if (!v) return std::string("-");
    return bold ? "**" + fixed6(*v) + "**" : fixed6(*v);
  };
  auto signed_cell = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    return (*v >= 0.0 ? "+" : "") + fixed6(*v);
  };

  os << "Step-wise mean similarity (config " << t.config_fingerprint << ", corpus "
     << t.corpus_fingerprint << ")\n\n";
  os << "| Step |";
  for (std::size_t s = 0; s < t.step_count; ++s) os << ' ' << s << " |";
  os << "\n|---|";
  for (std::size_t s = 0; s < t.step_count; ++s) os << "---|";
  os << "\n| #Samples |";
  for (std::size_t s = 0; s < t.step_count; ++s) os << ' ' << t.counts[s] << " |";
  os << '\n';
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    os << "| " << to_string(row.pipeline) << " - " << to_string(row.granularity) << " |";
    for (std::size_t s = 0; s < t.step_count; ++s) {
      const auto& best = t.column_best[s];
      const bool bold = std::find(best.begin(), best.end(), r) != best.end();
      os << ' ' << cell(row.cells[s], bold) << " |";
    }
    os << '\n';
  }
  for (Granularity g : kAllGranularities) {
    auto d = t.delta(g);
    if (!d) continue;
    os << "| delta (enhanced - raw) - " << to_string(g) << " |";
    for (std::size_t s = 0; s < t.step_count; ++s) os << ' ' << signed_cell(d->cells[s]) << " |";
    os << '\n';
  }

  os << "\nOverall mean similarity\n\n| Reference | raw | enhanced | delta |\n|---|---|---|---|\n";
  for (Granularity g : kAllGranularities) {
    const auto* raw = t.find(Pipeline::Raw, g);
    const auto* enh = t.find(Pipeline::Enhanced, g);
    if (raw == nullptr && enh == nullptr) continue;
    os << "| " << to_string(g) << " | " << (raw ? fixed6(raw->overall) : "-") << " | "
       << (enh ? fixed6(enh->overall) : "-") << " | "
       << (raw && enh ? signed_cell(enh->overall - raw->overall) : "-") << " |\n";
  }
  if (t.best_raw_granularity) os << "\nbest granularity (raw): " << to_string(*t.best_raw_granularity) << '\n';
  if (t.best_enhanced_granularity) {
    os << "best granularity (enhanced): " << to_string(*t.best_enhanced_granularity) << '\n';
  }
  return os.str();
}

std::string render_accuracy(const AccuracyReport& r) {
  std::ostringstream os;
  os << "step classification (" << to_string(r.pipeline) << ", " << to_string(r.granularity)
     << ", window " << r.smoothing.window_size << ", bias " << r.smoothing.forward_bias << "): "
     << r.correct << "/" << r.total << " = " << fixed6(r.accuracy) << "\n";
  os << "confusion (rows = label, columns = predicted)\n";
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    os << i << ':';
    for (std::size_t c : r.confusion[i]) os << ' ' << c;
    os << '\n';
  }
  return os.str();
}

std::string format_report(const EvalReport& r, ReportFormat format) {
  switch (format) {
    case ReportFormat::Table:
      return render_report_table(r);
    case ReportFormat::Csv:
      return report_to_csv(std::span<const EvalReport>(&r, 1));
    case ReportFormat::Json:
      break;
  }
  return to_json(r).dump(2) + "\n";
}

std::string format_comparison(const ComparisonTable& t, std::span<const EvalReport> reports,
                              ReportFormat format) {
  switch (format) {
    case ReportFormat::Table:
      return render_comparison_table(t);
    case ReportFormat::Csv:
      return report_to_csv(reports);
    case ReportFormat::Json:
      break;
  }
  json all = json::array();
  for (const EvalReport& r : reports) all.push_back(to_json(r));
  json out = to_json(t);
  out["reports"] = std::move(all);
  return out.dump(2) + "\n";
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("error while writing " + path.string());
}

void export_report(const EvalReport& r, ReportFormat format, const std::filesystem::path& path) {
  write_text_file(path, format_report(r, format));
}

}  // namespace taskguide
