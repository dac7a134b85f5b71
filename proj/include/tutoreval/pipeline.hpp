#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>

#include "json.hpp"

#include "tutoreval/judge.hpp"
#include "tutoreval/metrics.hpp"
#include "tutoreval/synthgen.hpp"

namespace tutoreval::pipeline {

inline constexpr const char* kToolVersion = "tutoreval 0.1.0";

/// Which judge backend a run talks to. Remote credentials are never stored in
/// the config: only the name of the environment variable holding the key.
struct BackendSelection {
    std::string kind = "fixture"; // fixture | remote
    std::string transcript;       // fixture transcript path
    judge::RemoteBackendConfig remote;
};

/// One run's complete configuration, parsed from a single JSON file and fully
/// validated before any work starts; unknown keys are rejected.
struct RunConfig {
    std::string submissions;
    std::string feedback;
    std::string ratings; // empty = no ratings file
    BackendSelection backend;
    std::string cache_dir;       // empty = <out_dir>/cache
    std::string annotations_dir; // empty = <out_dir>/annotations
    std::string out_dir = "out";
    metrics::DesiredLabelRubric rubric = metrics::DesiredLabelRubric::defaults();
    std::string baseline_tutor; // reference cohort for the helpfulness models
    std::size_t min_undesired_n = 15;
    int likert_threshold = 4;
    std::size_t parallelism = 1;
    std::uint64_t seed = 42; // feeds synthgen
    synthgen::GeneratorConfig synth;

    std::filesystem::path cache_path() const;
    std::filesystem::path annotations_path() const;
};

RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const nlohmann::json& raw);

enum class AnnotateTarget { pedagogy, engagement, both };
AnnotateTarget parse_annotate_target(const std::string& text);

// Each command logs human-readable progress, writes a machine-readable
// summary under out_dir, and returns 0; failures are reported by exception
// (run_command maps them onto the exit-code contract).
int cmd_validate(const RunConfig& config, std::ostream& log);
int cmd_annotate(const RunConfig& config, AnnotateTarget which, std::ostream& log);
int cmd_evaluate(const RunConfig& config, std::ostream& log);
int cmd_synth(const RunConfig& config, std::ostream& log);
int cmd_agreement(const RunConfig& config,
                  const std::filesystem::path& annotations_a,
                  const std::filesystem::path& annotations_b,
                  std::ostream& log);

/// Exit-code contract: 0 success, 2 input/config error, 3 backend error,
/// 4 pipeline-state error.
int exit_code_for(const std::exception& error);

/// Runs a command body, mapping exceptions to exit codes and printing the
/// error to `err`.
int run_command(const std::function<int()>& body, std::ostream& err);

} // namespace tutoreval::pipeline
