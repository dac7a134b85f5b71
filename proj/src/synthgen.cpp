#include "tutoreval/synthgen.hpp"

#include <cmath>
#include <random>

#include "json.hpp"

#include "tutoreval/corpus.hpp"
#include "tutoreval/dimensions.hpp"
#include "tutoreval/errors.hpp"
#include "tutoreval/judge.hpp"
#include "tutoreval/metrics.hpp"
#include "tutoreval/util.hpp"

using nlohmann::json;

namespace tutoreval::synthgen {

double TutorPlant::desired_for(const std::string& dimension) const {
    auto it = desired_prob_by_dimension.find(dimension);
    return it == desired_prob_by_dimension.end() ? desired_prob : it->second;
}

namespace {

void require_prob(double p, const std::string& name) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw ConfigError(name + " must lie in [0,1], got " + util::format_double(p));
    }
}

// Deterministic variates on top of the fixed mt19937_64 stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { // [0, 1)
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::size_t below(std::size_t n) { // uniform over 0..n-1
        return static_cast<std::size_t>(engine_() % n);
    }

private:
    std::mt19937_64 engine_;
};

const std::vector<std::string>& sentence_bank() {
    static const std::vector<std::string> bank = {
        "Check the loop bounds.",
        "Consider the base case first.",
        "Recheck the return value.",
        "Compare your output against the sample run.",
        "Think about what happens for an empty input.",
        "Trace the recursion by hand.",
        "The condition looks inverted.",
        "Use a helper to keep the cases apart.",
        "Print the intermediate values to see where it diverges.",
        "Remember that indexing starts at zero.",
    };
    return bank;
}

std::string toy_code(std::size_t stream_number, int attempt) {
    return "def solve(x):\n    total = x * " + std::to_string(stream_number % 7 + 1) +
           "\n    return total + " + std::to_string(attempt) + "\n";
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

} // namespace

void GeneratorConfig::validate() const {
    require_prob(abandon_prob, "abandon_prob");
    require_prob(feedback_prob, "feedback_prob");
    require_prob(rating_prob, "rating_prob");
    if (n_students == 0 || n_assignments == 0 || n_problems == 0) {
        throw ConfigError("generator would produce zero streams "
                          "(n_students, n_assignments and n_problems must all be positive)");
    }
    if (mean_attempts < 1.0) {
        throw ConfigError("mean_attempts must be at least 1");
    }
    if (min_sentences == 0 || max_sentences < min_sentences) {
        throw ConfigError("sentence count range is empty");
    }
    if (tutors.empty()) {
        throw ConfigError("at least one tutor plant is required");
    }
    bool baseline_found = false;
    for (const TutorPlant& tutor : tutors) {
        if (tutor.tutor_id.empty()) {
            throw ConfigError("tutor_id cannot be empty");
        }
        require_prob(tutor.rel_prob, "rel_prob (" + tutor.tutor_id + ")");
        require_prob(tutor.succ_prob_given_rel, "succ_prob_given_rel (" + tutor.tutor_id + ")");
        require_prob(tutor.desired_prob, "desired_prob (" + tutor.tutor_id + ")");
        for (const auto& [dimension, p] : tutor.desired_prob_by_dimension) {
            if (!is_dimension_name(dimension)) {
                throw ConfigError("desired_prob override names unknown dimension '" + dimension +
                                  "'");
            }
            require_prob(p, "desired_prob." + dimension + " (" + tutor.tutor_id + ")");
        }
        baseline_found = baseline_found || tutor.tutor_id == baseline_tutor_id;
    }
    if (!baseline_found) {
        throw ConfigError("baseline_tutor_id '" + baseline_tutor_id + "' names no tutor plant");
    }
}

GenerationResult generate(const GeneratorConfig& config, const std::filesystem::path& out_dir) {
    config.validate();
    std::filesystem::create_directories(out_dir);

    Rng rng(config.seed);
    const metrics::DesiredLabelRubric rubric = metrics::DesiredLabelRubric::defaults();
    const auto dims = dimension_names();

    corpus::Corpus built;
    std::string transcript;
    GenerationResult result;

    std::size_t feedback_counter = 0;
    std::size_t stream_number = 0;
    // Deterministic timestamp base: streams are spaced a day apart, attempts a
    // minute apart, so every stream is strictly increasing.
    const std::int64_t epoch_base = 1725148800; // 2024-09-01T00:00:00Z

    for (const TutorPlant& tutor : config.tutors) {
        const bool is_baseline = tutor.tutor_id == config.baseline_tutor_id;
        for (std::size_t s = 0; s < config.n_students; ++s) {
            const std::string student_id = tutor.tutor_id + "-s" + std::to_string(s);
            for (std::size_t a = 0; a < config.n_assignments; ++a) {
                for (std::size_t p = 0; p < config.n_problems; ++p) {
                    ++stream_number;
                    corpus::SubmissionStream stream;
                    stream.student_id = student_id;
                    stream.problem_id = "a" + std::to_string(a + 1) + "-p" + std::to_string(p + 1);
                    stream.tutor_id = tutor.tutor_id;
                    stream.assignment_id = static_cast<int>(a + 1);

                    std::size_t attempts = 1;
                    const double continue_prob =
                        config.mean_attempts <= 1.0 ? 0.0 : 1.0 - 1.0 / config.mean_attempts;
                    while (attempts < 8 && rng.bernoulli(continue_prob)) ++attempts;
                    const bool abandoned = rng.bernoulli(config.abandon_prob);

                    for (std::size_t j = 0; j < attempts; ++j) {
                        corpus::Submission sub;
                        sub.submission_id = "sub-" + tutor.tutor_id + "-s" + std::to_string(s) +
                                            "-" + stream.problem_id + "-" + std::to_string(j);
                        sub.tutor_id = tutor.tutor_id;
                        sub.student_id = student_id;
                        sub.assignment_id = stream.assignment_id;
                        sub.problem_id = stream.problem_id;
                        sub.attempt_index = static_cast<int>(j);
                        sub.timestamp = util::format_iso8601(
                            epoch_base + static_cast<std::int64_t>(stream_number) * 86400 +
                            static_cast<std::int64_t>(j) * 60);
                        sub.code = toy_code(stream_number, static_cast<int>(j));
                        sub.passed = !abandoned && j + 1 == attempts;
                        sub.autograder_output =
                            sub.passed ? "PASS: all tests passed"
                                       : "FAIL: expected 12, got " + std::to_string(7 + j);
                        stream.submissions.push_back(std::move(sub));
                    }

                    // Feedback, planted labels, transcript entries and ratings
                    // for the failed attempts.
                    for (std::size_t j = 0; j < stream.submissions.size(); ++j) {
                        const corpus::Submission& sub = stream.submissions[j];
                        if (sub.passed) continue;
                        if (!rng.bernoulli(config.feedback_prob)) continue;

                        corpus::FeedbackMessage feedback;
                        feedback.feedback_id = "fb-" + std::to_string(++feedback_counter);
                        feedback.submission_id = sub.submission_id;
                        const std::size_t n_sentences =
                            config.min_sentences +
                            rng.below(config.max_sentences - config.min_sentences + 1);
                        for (std::size_t m = 0; m < n_sentences; ++m) {
                            const std::string& sentence =
                                sentence_bank()[rng.below(sentence_bank().size())];
                            feedback.text += (m == 0 ? "" : " ") + sentence;
                        }
                        feedback.sentences = judge::segment_sentences(feedback.text);
                        if (feedback.sentences.size() != n_sentences) {
                            throw std::logic_error("sentence bank broke segmentation");
                        }
                        result.n_sentences += n_sentences;

                        // Pedagogy labels.
                        json labels = json::object();
                        std::array<int, 8> desired_bits{};
                        for (std::size_t d = 0; d < dims.size(); ++d) {
                            const std::string dimension(dims[d]);
                            const std::set<int>& desired = rubric.desired(dimension);
                            std::vector<int> undesired;
                            for (int label = 1; label <= 3; ++label) {
                                if (!desired.count(label)) undesired.push_back(label);
                            }
                            int label = 0;
                            if (undesired.empty() || rng.bernoulli(tutor.desired_for(dimension))) {
                                auto it = desired.begin();
                                std::advance(it, rng.below(desired.size()));
                                label = *it;
                                desired_bits[d] = 1;
                            } else {
                                label = undesired[rng.below(undesired.size())];
                            }
                            labels[dimension] = label;
                        }
                        transcript += json{{"key", judge::pedagogy_item_key(feedback.feedback_id)},
                                           {"reply", json{{"labels", labels}}.dump()}}
                                          .dump() +
                                      "\n";

                        // Engagement bits exist only when a next attempt exists.
                        const bool has_next = j + 1 < stream.submissions.size();
                        double planted_rel_score = 0.0;
                        double planted_succ = 0.0;
                        bool succ_defined = false;
                        if (has_next) {
                            json sentences = json::array();
                            std::size_t rel_sum = 0;
                            std::size_t succ_sum = 0;
                            for (std::size_t m = 0; m < n_sentences; ++m) {
                                const bool rel = rng.bernoulli(tutor.rel_prob);
                                json entry = {{"index", static_cast<int>(m)},
                                              {"rel", rel ? 1 : 0}};
                                if (rel) {
                                    const bool succ = rng.bernoulli(tutor.succ_prob_given_rel);
                                    entry["succ"] = succ ? 1 : 0;
                                    entry["rationale"] = "planted attribution";
                                    ++rel_sum;
                                    succ_sum += succ ? 1 : 0;
                                } else {
                                    entry["rationale"] = "";
                                }
                                sentences.push_back(std::move(entry));
                            }
                            transcript +=
                                json{{"key", judge::engagement_item_key(feedback.feedback_id)},
                                     {"reply", json{{"sentences", sentences}}.dump()}}
                                    .dump() +
                                "\n";
                            ++result.n_engagement_pairs;
                            planted_rel_score =
                                static_cast<double>(rel_sum) / static_cast<double>(n_sentences);
                            if (rel_sum > 0) {
                                succ_defined = true;
                                planted_succ =
                                    static_cast<double>(succ_sum) / static_cast<double>(rel_sum);
                            }
                        }

                        // Rating from the planted logistic model.
                        if (rng.bernoulli(config.rating_prob)) {
                            double z = config.beta.intercept;
                            for (std::size_t d = 0; d < dims.size(); ++d) {
                                z += config.beta.pedagogy[d] * desired_bits[d];
                            }
                            z += config.beta.rel * planted_rel_score;
                            z += config.beta.succ * (succ_defined ? planted_succ : 0.0);
                            z += config.beta.baseline * (is_baseline ? 1.0 : 0.0);
                            const bool helpful = rng.bernoulli(sigmoid(z));
                            corpus::Rating rating;
                            rating.submission_id = sub.submission_id;
                            rating.likert = helpful ? (rng.bernoulli(0.5) ? 5 : 4)
                                                    : static_cast<int>(1 + rng.below(3));
                            built.ratings_by_submission[rating.submission_id] = rating;
                            ++result.n_ratings;
                        }

                        built.feedback_by_submission[feedback.submission_id] = feedback;
                        ++result.n_feedback;
                    }

                    result.n_submissions += stream.submissions.size();
                    built.streams.push_back(std::move(stream));
                    ++result.n_streams;
                }
            }
        }
    }

    result.submissions_path = out_dir / "submissions.jsonl";
    result.feedback_path = out_dir / "feedback.jsonl";
    result.ratings_path = out_dir / "ratings.jsonl";
    result.transcript_path = out_dir / "judge_transcript.jsonl";
    result.ground_truth_path = out_dir / "ground_truth.json";

    corpus::write_corpus(built, result.submissions_path, result.feedback_path,
                         result.ratings_path);
    util::write_file(result.transcript_path, transcript);

    json truth;
    truth["seed"] = config.seed;
    truth["baseline_tutor_id"] = config.baseline_tutor_id;
    truth["counts"] = {{"streams", result.n_streams},
                       {"submissions", result.n_submissions},
                       {"feedback", result.n_feedback},
                       {"sentences", result.n_sentences},
                       {"engagement_pairs", result.n_engagement_pairs},
                       {"ratings", result.n_ratings}};
    json tutors = json::array();
    for (const TutorPlant& tutor : config.tutors) {
        json overrides = json::object();
        for (const auto& [dimension, p] : tutor.desired_prob_by_dimension) {
            overrides[dimension] = p;
        }
        tutors.push_back({{"tutor_id", tutor.tutor_id},
                          {"rel_prob", tutor.rel_prob},
                          {"succ_prob_given_rel", tutor.succ_prob_given_rel},
                          {"desired_prob", tutor.desired_prob},
                          {"desired_prob_by_dimension", overrides}});
    }
    truth["tutors"] = tutors;
    json beta;
    for (std::size_t d = 0; d < dims.size(); ++d) {
        beta[std::string(dims[d])] = config.beta.pedagogy[d];
    }
    beta["rel_score"] = config.beta.rel;
    beta["succ_score"] = config.beta.succ;
    beta["baseline_tutor"] = config.beta.baseline;
    beta["intercept"] = config.beta.intercept;
    truth["beta"] = beta;
    util::write_file(result.ground_truth_path, truth.dump(2) + "\n");

    return result;
}

} // namespace tutoreval::synthgen
