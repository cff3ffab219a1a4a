#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "taskguide/backends.hpp"
#include "taskguide/estimator.hpp"
#include "taskguide/recipe.hpp"

namespace taskguide {

enum class Pipeline { Raw, Enhanced };
/// Truth: similarity to the labeled step's reference.
/// Argmax: similarity to the best-matching step's reference.
enum class Against { Truth, Argmax };
enum class ReportFormat { Table, Csv, Json };

std::string_view to_string(Pipeline p);
std::string_view to_string(Against a);
std::string_view to_string(ReportFormat f);
std::optional<Pipeline> parse_pipeline(std::string_view s);
std::optional<Against> parse_against(std::string_view s);
std::optional<ReportFormat> parse_report_format(std::string_view s);

struct LabeledEvent {
  std::uint64_t frame_index = 0;
  std::string text;
  std::size_t step = 0;
  std::optional<std::string> enhanced;
  bool fallback = false;
};

struct LabeledCorpus {
  std::string recipe_id;
  std::vector<LabeledEvent> events;

  bool has_enhanced() const;
  /// Hash over frame indices, raw texts and labels.
  std::string fingerprint() const;
  /// Text seen by `pipeline`. Throws InputError when enhanced text is missing.
  const std::string& text(std::size_t i, Pipeline pipeline) const;
};

/// Reads a caption JSONL file; every record must carry `step`.
LabeledCorpus load_labeled_corpus(const std::filesystem::path& path, std::string recipe_id);
/// Throws InputError when a label is outside the recipe.
void validate_corpus(const LabeledCorpus& corpus, const Recipe& recipe);

struct StepStat {
  std::size_t step = 0;
  std::size_t count = 0;
  double mean = 0.0;

  bool operator==(const StepStat&) const = default;
};

struct EvalReport {
  Pipeline pipeline = Pipeline::Raw;
  Granularity granularity = Granularity::Medium;
  Against against = Against::Truth;
  double overall_mean = 0.0;
  /// Steps with at least one event, ascending.
  std::vector<StepStat> per_step;
  std::string config_fingerprint;
  std::string corpus_fingerprint;
  std::string embedder_id;
  std::string recipe_id;
};

/// Sum(count * mean) / Sum(count) over `per_step`; 0 when empty.
double weighted_mean(std::span<const StepStat> per_step);

/// Hash of (embedder id, recipe id, smoothing description, against mode).
std::string config_fingerprint(std::string_view embedder_id, std::string_view recipe_id,
                               std::string_view smoothing, Against against);

/// Mean cosine similarity between each caption and a step reference at `g`,
/// aggregated per labeled step and overall (pairwise summation).
EvalReport evaluate_similarity(const LabeledCorpus& corpus, const Recipe& recipe, Granularity g,
                               EmbedBackend& embedder, Pipeline pipeline,
                               Against against = Against::Truth, ReferenceCache* cache = nullptr);

/// Steps x (pipeline, granularity) comparison in the layout of a step-wise
/// similarity table.
struct ComparisonTable {
  struct Row {
    Pipeline pipeline;
    Granularity granularity;
    std::vector<std::optional<double>> cells;  // one per step
    double overall = 0.0;
  };

  std::size_t step_count = 0;
  std::vector<std::size_t> counts;  // samples per step
  std::vector<Row> rows;            // raw rows first, then enhanced; short..long
  /// Per step, indices into `rows` holding the column maximum (ties kept).
  std::vector<std::vector<std::size_t>> column_best;
  /// Granularity with the highest enhanced overall mean, if any enhanced row exists.
  std::optional<Granularity> best_enhanced_granularity;
  std::optional<Granularity> best_raw_granularity;
  std::string config_fingerprint;
  std::string corpus_fingerprint;

  const Row* find(Pipeline p, Granularity g) const;
  /// Enhanced minus raw per step and overall, when both rows exist.
  std::optional<Row> delta(Granularity g) const;
};

/// Throws ConsistencyError when reports disagree on fingerprints or counts,
/// repeat a (pipeline, granularity) pair, or mention a step >= step_count.
ComparisonTable stepwise_report(std::span<const EvalReport> reports, std::size_t step_count);

struct AccuracyReport {
  Pipeline pipeline = Pipeline::Raw;
  Granularity granularity = Granularity::Medium;
  SmoothingConfig smoothing;
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  /// confusion[label][predicted]
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<std::size_t> predictions;
  std::string config_fingerprint;
};

/// Streams the corpus (in temporal order) through a smoothed estimator.
/// Throws InputError when frame indices are not strictly increasing.
AccuracyReport classification_accuracy(const LabeledCorpus& corpus, const Recipe& recipe,
                                       Granularity g, EmbedBackend& embedder,
                                       const SmoothingConfig& smoothing,
                                       Pipeline pipeline = Pipeline::Raw,
                                       ReferenceCache* cache = nullptr);

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ComparisonTable& t);
nlohmann::json to_json(const AccuracyReport& r);

/// CSV rows `pipeline,granularity,step,count,mean` with means at 6 decimals.
std::string report_to_csv(std::span<const EvalReport> reports);
/// Parses `report_to_csv` output, one report per (pipeline, granularity).
std::vector<EvalReport> reports_from_csv(std::string_view csv);

std::string render_report_table(const EvalReport& r);
std::string render_comparison_table(const ComparisonTable& t);
std::string render_accuracy(const AccuracyReport& r);

std::string format_report(const EvalReport& r, ReportFormat format);
std::string format_comparison(const ComparisonTable& t, std::span<const EvalReport> reports,
                              ReportFormat format);

/// Writes `content` to `path`. Throws IoError when the path is not writable.
void write_text_file(const std::filesystem::path& path, std::string_view content);
void export_report(const EvalReport& r, ReportFormat format, const std::filesystem::path& path);

}  // namespace taskguide
