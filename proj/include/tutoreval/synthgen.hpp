#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tutoreval::synthgen {

/// Planted per-tutor behavior.
struct TutorPlant {
    std::string tutor_id;
    double rel_prob = 0.8;            // P(sentence is relevant)
    double succ_prob_given_rel = 0.6; // P(applied correctly | relevant)
    double desired_prob = 0.9;        // P(dimension label is desired), unless overridden
    std::map<std::string, double> desired_prob_by_dimension;

    double desired_for(const std::string& dimension) const;
};

/// Coefficients of the rating-generation model:
/// logit P(helpful) = pedagogy . P + rel * RelScore + succ * SuccScore
///                    + baseline * I[baseline cohort] + intercept.
struct HelpfulnessBeta {
    std::array<double, 8> pedagogy{}; // canonical dimension order
    double rel = 0.0;
    double succ = 0.0;
    double baseline = 0.0;
    double intercept = 0.0;
};

struct GeneratorConfig {
    std::uint64_t seed = 42;
    std::size_t n_students = 10;    // per tutor
    std::size_t n_assignments = 2;
    std::size_t n_problems = 3;     // per assignment
    double mean_attempts = 3.0;     // >= 1; geometric continuation, capped at 8
    double abandon_prob = 0.1;      // stream ends unfixed
    double feedback_prob = 1.0;     // failed attempt draws feedback
    double rating_prob = 1.0;       // feedback-bearing failed attempt is rated
    std::size_t min_sentences = 2;  // sentences per feedback, uniform in
    std::size_t max_sentences = 4;  // [min_sentences, max_sentences]
    std::vector<TutorPlant> tutors = {{"baseline", 0.55, 0.5, 0.8, {}},
                                      {"misconception", 0.75, 0.6, 0.9, {}}};
    std::string baseline_tutor_id = "baseline";
    HelpfulnessBeta beta;

    /// Throws ConfigError on out-of-range probabilities, zero streams, or a
    /// baseline id that names no tutor.
    void validate() const;
};

struct GenerationResult {
    std::filesystem::path submissions_path;
    std::filesystem::path feedback_path;
    std::filesystem::path ratings_path;
    std::filesystem::path transcript_path;   // fixture-backend replies
    std::filesystem::path ground_truth_path; // planted rates and beta, JSON
    std::size_t n_streams = 0;
    std::size_t n_submissions = 0;
    std::size_t n_feedback = 0;
    std::size_t n_sentences = 0;
    std::size_t n_engagement_pairs = 0;
    std::size_t n_ratings = 0;
};

/// Generates a synthetic corpus plus the fixture judge transcript that
/// reproduces the planted labels, and a ground-truth JSON for oracle tests.
/// Byte-identical for identical configs (single-threaded, own variate code on
/// top of mt19937_64 — libstdc++ distribution objects are not pinned across
/// implementations).
GenerationResult generate(const GeneratorConfig& config,
                          const std::filesystem::path& out_dir);

} // namespace tutoreval::synthgen
