#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "taskguide/backends.hpp"
#include "taskguide/caption.hpp"
#include "taskguide/estimator.hpp"
#include "taskguide/recipe.hpp"

namespace taskguide {

/// Path of a file shipped in the source tree (fixtures, config, templates).
std::filesystem::path bundled_path(const std::filesystem::path& relative);

struct ReplayOptions {
  std::filesystem::path session_file;
  CadencePolicy cadence;
  Pacing pacing = Pacing::AsFastAsPossible;
  Granularity granularity = Granularity::Medium;
  SmoothingConfig smoothing;
};

/// Estimate payloads (compact JSON, one per replayed caption) from running
/// the estimator in-process.
std::vector<std::string> replay_offline(const ReplayOptions& options, const Recipe& recipe,
                                        EmbedBackend& embedder);

/// Creates a session on `base_url`, posts every replayed caption, then reads
/// the session's event stream and returns the payloads of its Estimate frames.
std::vector<std::string> replay_http(const ReplayOptions& options, const std::string& recipe_id,
                                     const std::string& base_url);

struct SmokeCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Runs the bundled fixture end to end with mock backends.
std::vector<SmokeCheck> run_smoke(std::ostream& log);

/// Entry point of the `taskguide` executable. Exit codes: 0 success,
/// 1 runtime failure, 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace taskguide
