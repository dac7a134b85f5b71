#include "tutoreval/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <thread>
#include <vector>

#include "tutoreval/corpus.hpp"
#include "tutoreval/dimensions.hpp"
#include "tutoreval/distributions.hpp"
#include "tutoreval/errors.hpp"
#include "tutoreval/perception.hpp"
#include "tutoreval/report.hpp"
#include "tutoreval/stats.hpp"
#include "tutoreval/util.hpp"

namespace tutoreval::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

namespace {

void expect_keys(const json& object, const std::string& where,
                 const std::set<std::string>& allowed) {
    for (const auto& [key, value] : object.items()) {
        (void)value;
        if (allowed.count(key) == 0) {
            throw ConfigError("unknown key '" + key + "' in " + where);
        }
    }
}

const json* find(const json& object, const std::string& key) {
    auto it = object.find(key);
    return it == object.end() ? nullptr : &*it;
}

std::string as_string(const json& value, const std::string& where) {
    if (!value.is_string()) throw ConfigError(where + " must be a string");
    return value.get<std::string>();
}

double as_number(const json& value, const std::string& where) {
    if (!value.is_number()) throw ConfigError(where + " must be a number");
    return value.get<double>();
}

int as_int(const json& value, const std::string& where) {
    if (!value.is_number_integer()) throw ConfigError(where + " must be an integer");
    return value.get<int>();
}

std::size_t as_size(const json& value, const std::string& where) {
    if (!value.is_number_integer() || (value.is_number_integer() && !value.is_number_unsigned() &&
                                       value.get<long long>() < 0)) {
        throw ConfigError(where + " must be a non-negative integer");
    }
    return static_cast<std::size_t>(value.get<unsigned long long>());
}

BackendSelection parse_backend(const json& object) {
    if (!object.is_object()) throw ConfigError("backend must be an object");
    expect_keys(object, "backend",
                {"kind", "transcript", "endpoint", "model", "api_key_env", "temperature",
                 "max_retries", "initial_backoff_ms", "timeout_seconds"});
    BackendSelection selection;
    if (const json* kind = find(object, "kind")) {
        selection.kind = as_string(*kind, "backend.kind");
        if (selection.kind != "fixture" && selection.kind != "remote") {
            throw ConfigError("backend.kind must be 'fixture' or 'remote', got '" +
                              selection.kind + "'");
        }
    }
    if (const json* transcript = find(object, "transcript")) {
        selection.transcript = as_string(*transcript, "backend.transcript");
    }
    if (const json* endpoint = find(object, "endpoint")) {
        selection.remote.endpoint = as_string(*endpoint, "backend.endpoint");
    }
    if (const json* model = find(object, "model")) {
        selection.remote.model = as_string(*model, "backend.model");
    }
    if (const json* api_key_env = find(object, "api_key_env")) {
        // Only the *name* of the environment variable; the key itself never
        // appears in a config file.
        selection.remote.api_key_env = as_string(*api_key_env, "backend.api_key_env");
        if (selection.remote.api_key_env.empty()) {
            throw ConfigError("backend.api_key_env must not be empty");
        }
    }
    if (const json* temperature = find(object, "temperature")) {
        selection.remote.temperature = as_number(*temperature, "backend.temperature");
    }
    if (const json* retries = find(object, "max_retries")) {
        selection.remote.max_retries = as_int(*retries, "backend.max_retries");
        if (selection.remote.max_retries < 0) throw ConfigError("backend.max_retries must be >= 0");
    }
    if (const json* backoff = find(object, "initial_backoff_ms")) {
        selection.remote.initial_backoff_ms = as_int(*backoff, "backend.initial_backoff_ms");
        if (selection.remote.initial_backoff_ms < 0) {
            throw ConfigError("backend.initial_backoff_ms must be >= 0");
        }
    }
    if (const json* timeout = find(object, "timeout_seconds")) {
        selection.remote.timeout_seconds = as_int(*timeout, "backend.timeout_seconds");
        if (selection.remote.timeout_seconds <= 0) {
            throw ConfigError("backend.timeout_seconds must be > 0");
        }
    }
    return selection;
}

synthgen::TutorPlant parse_tutor(const json& object, const std::string& where) {
    if (!object.is_object()) throw ConfigError(where + " must be an object");
    expect_keys(object, where,
                {"tutor_id", "rel_prob", "succ_prob_given_rel", "desired_prob",
                 "desired_prob_by_dimension"});
    const json* id = find(object, "tutor_id");
    if (id == nullptr) throw ConfigError(where + ": tutor_id is required");
    synthgen::TutorPlant plant;
    plant.tutor_id = as_string(*id, where + ".tutor_id");
    if (const json* value = find(object, "rel_prob")) {
        plant.rel_prob = as_number(*value, where + ".rel_prob");
    }
    if (const json* value = find(object, "succ_prob_given_rel")) {
        plant.succ_prob_given_rel = as_number(*value, where + ".succ_prob_given_rel");
    }
    if (const json* value = find(object, "desired_prob")) {
        plant.desired_prob = as_number(*value, where + ".desired_prob");
    }
    if (const json* overrides = find(object, "desired_prob_by_dimension")) {
        if (!overrides->is_object()) {
            throw ConfigError(where + ".desired_prob_by_dimension must be an object");
        }
        for (const auto& [dimension, probability] : overrides->items()) {
            plant.desired_prob_by_dimension[dimension] =
                as_number(probability, where + ".desired_prob_by_dimension." + dimension);
        }
    }
    return plant;
}

synthgen::HelpfulnessBeta parse_beta(const json& object) {
    if (!object.is_object()) throw ConfigError("synth.beta must be an object");
    std::set<std::string> allowed = {"rel_score", "succ_score", "baseline_tutor", "intercept"};
    for (const auto& name : dimension_names()) allowed.emplace(name);
    expect_keys(object, "synth.beta", allowed);
    synthgen::HelpfulnessBeta beta;
    const auto names = dimension_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (const json* value = find(object, std::string(names[i]))) {
            beta.pedagogy[i] = as_number(*value, "synth.beta." + std::string(names[i]));
        }
    }
    if (const json* value = find(object, "rel_score")) {
        beta.rel = as_number(*value, "synth.beta.rel_score");
    }
    if (const json* value = find(object, "succ_score")) {
        beta.succ = as_number(*value, "synth.beta.succ_score");
    }
    if (const json* value = find(object, "baseline_tutor")) {
        beta.baseline = as_number(*value, "synth.beta.baseline_tutor");
    }
    if (const json* value = find(object, "intercept")) {
        beta.intercept = as_number(*value, "synth.beta.intercept");
    }
    return beta;
}

synthgen::GeneratorConfig parse_synth(const json& object) {
    if (!object.is_object()) throw ConfigError("synth must be an object");
    expect_keys(object, "synth",
                {"n_students", "n_assignments", "n_problems", "mean_attempts", "abandon_prob",
                 "feedback_prob", "rating_prob", "min_sentences", "max_sentences", "tutors",
                 "baseline_tutor_id", "beta"});
    synthgen::GeneratorConfig generator;
    if (const json* value = find(object, "n_students")) {
        generator.n_students = as_size(*value, "synth.n_students");
    }
    if (const json* value = find(object, "n_assignments")) {
        generator.n_assignments = as_size(*value, "synth.n_assignments");
    }
    if (const json* value = find(object, "n_problems")) {
        generator.n_problems = as_size(*value, "synth.n_problems");
    }
    if (const json* value = find(object, "mean_attempts")) {
        generator.mean_attempts = as_number(*value, "synth.mean_attempts");
    }
    if (const json* value = find(object, "abandon_prob")) {
        generator.abandon_prob = as_number(*value, "synth.abandon_prob");
    }
    if (const json* value = find(object, "feedback_prob")) {
        generator.feedback_prob = as_number(*value, "synth.feedback_prob");
    }
    if (const json* value = find(object, "rating_prob")) {
        generator.rating_prob = as_number(*value, "synth.rating_prob");
    }
    if (const json* value = find(object, "min_sentences")) {
        generator.min_sentences = as_size(*value, "synth.min_sentences");
    }
    if (const json* value = find(object, "max_sentences")) {
        generator.max_sentences = as_size(*value, "synth.max_sentences");
    }
    if (const json* tutors = find(object, "tutors")) {
        if (!tutors->is_array() || tutors->empty()) {
            throw ConfigError("synth.tutors must be a non-empty array");
        }
        generator.tutors.clear();
        for (std::size_t i = 0; i < tutors->size(); ++i) {
            generator.tutors.push_back(
                parse_tutor((*tutors)[i], "synth.tutors[" + std::to_string(i) + "]"));
        }
    }
    if (const json* value = find(object, "baseline_tutor_id")) {
        generator.baseline_tutor_id = as_string(*value, "synth.baseline_tutor_id");
    }
    if (const json* beta = find(object, "beta")) {
        generator.beta = parse_beta(*beta);
    }
    return generator;
}

} // namespace

RunConfig parse_config(const json& raw) {
    if (!raw.is_object()) throw ConfigError("config root must be a JSON object");
    expect_keys(raw, "config",
                {"submissions", "feedback", "ratings", "backend", "cache_dir", "annotations_dir",
                 "out_dir", "rubric_overrides", "baseline_tutor", "min_undesired_n",
                 "likert_threshold", "parallelism", "seed", "synth"});
    RunConfig config;
    if (const json* value = find(raw, "submissions")) {
        config.submissions = as_string(*value, "submissions");
    }
    if (const json* value = find(raw, "feedback")) config.feedback = as_string(*value, "feedback");
    if (const json* value = find(raw, "ratings")) config.ratings = as_string(*value, "ratings");
    if (const json* value = find(raw, "backend")) config.backend = parse_backend(*value);
    if (const json* value = find(raw, "cache_dir")) {
        config.cache_dir = as_string(*value, "cache_dir");
    }
    if (const json* value = find(raw, "annotations_dir")) {
        config.annotations_dir = as_string(*value, "annotations_dir");
    }
    if (const json* value = find(raw, "out_dir")) config.out_dir = as_string(*value, "out_dir");
    if (const json* overrides = find(raw, "rubric_overrides")) {
        if (!overrides->is_object()) throw ConfigError("rubric_overrides must be an object");
        for (const auto& [dimension, labels] : overrides->items()) {
            if (!labels.is_array() || labels.empty()) {
                throw ConfigError("rubric_overrides." + dimension +
                                  " must be a non-empty array of labels");
            }
            std::set<int> desired;
            for (const auto& label : labels) {
                desired.insert(as_int(label, "rubric_overrides." + dimension));
            }
            try {
                config.rubric.set_desired(dimension, std::move(desired));
            } catch (const ValidationError& error) {
                throw ConfigError(std::string("rubric_overrides: ") + error.what());
            }
        }
    }
    if (const json* value = find(raw, "baseline_tutor")) {
        config.baseline_tutor = as_string(*value, "baseline_tutor");
    }
    if (const json* value = find(raw, "min_undesired_n")) {
        config.min_undesired_n = as_size(*value, "min_undesired_n");
    }
    if (const json* value = find(raw, "likert_threshold")) {
        config.likert_threshold = as_int(*value, "likert_threshold");
        if (config.likert_threshold < 1 || config.likert_threshold > 5) {
            throw ConfigError("likert_threshold must be in 1..5");
        }
    }
    if (const json* value = find(raw, "parallelism")) {
        config.parallelism = as_size(*value, "parallelism");
        if (config.parallelism == 0) throw ConfigError("parallelism must be >= 1");
    }
    if (const json* value = find(raw, "seed")) {
        if (value->is_number_unsigned()) {
            config.seed = value->get<std::uint64_t>();
        } else if (value->is_number_integer() && value->get<long long>() >= 0) {
            config.seed = static_cast<std::uint64_t>(value->get<long long>());
        } else {
            throw ConfigError("seed must be a non-negative integer");
        }
    }
    if (const json* value = find(raw, "synth")) config.synth = parse_synth(*value);
    config.synth.validate(); // fail at load time, before any work
    return config;
}

RunConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    json raw;
    try {
        raw = json::parse(util::read_file(path));
    } catch (const json::exception& error) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + error.what());
    }
    return parse_config(raw);
}

fs::path RunConfig::cache_path() const {
    return cache_dir.empty() ? fs::path(out_dir) / "cache" : fs::path(cache_dir);
}

fs::path RunConfig::annotations_path() const {
    return annotations_dir.empty() ? fs::path(out_dir) / "annotations" : fs::path(annotations_dir);
}

AnnotateTarget parse_annotate_target(const std::string& text) {
    if (text == "pedagogy") return AnnotateTarget::pedagogy;
    if (text == "engagement") return AnnotateTarget::engagement;
    if (text == "both") return AnnotateTarget::both;
    throw ConfigError("annotate target must be pedagogy, engagement or both; got '" + text + "'");
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

namespace {

corpus::Corpus load_corpus(const RunConfig& config) {
    if (config.submissions.empty()) {
        throw ConfigError("config key 'submissions' is required for this command");
    }
    if (config.feedback.empty()) {
        throw ConfigError("config key 'feedback' is required for this command");
    }
    for (const std::string* path : {&config.submissions, &config.feedback}) {
        if (!fs::exists(*path)) throw ConfigError("input file not found: " + *path);
    }
    std::optional<fs::path> ratings;
    if (!config.ratings.empty()) {
        if (!fs::exists(config.ratings)) {
            throw ConfigError("input file not found: " + config.ratings);
        }
        ratings = fs::path(config.ratings);
    }
    corpus::Corpus c = corpus::parse_corpus(config.submissions, config.feedback, ratings);
    // The parser leaves sentence segmentation to its callers; every command
    // downstream of here wants it done.
    for (auto& [submission_id, feedback] : c.feedback_by_submission) {
        (void)submission_id;
        feedback.sentences = judge::segment_sentences(feedback.text);
    }
    return c;
}

std::unique_ptr<judge::JudgeBackend> make_backend(const RunConfig& config) {
    if (config.backend.kind == "fixture") {
        if (config.backend.transcript.empty()) {
            throw ConfigError("fixture backend requires backend.transcript");
        }
        if (!fs::exists(config.backend.transcript)) {
            throw ConfigError("fixture transcript not found: " + config.backend.transcript);
        }
        return std::make_unique<judge::FixtureBackend>(fs::path(config.backend.transcript));
    }
    return std::make_unique<judge::RemoteBackend>(config.backend.remote);
}

/// Work-stealing loop over [0, n_items) on up to n_workers threads. The first
/// exception wins and is rethrown on the caller's thread after join.
void run_parallel(std::size_t n_items, std::size_t n_workers,
                  const std::function<void(std::size_t)>& work) {
    n_workers = std::max<std::size_t>(1, std::min(n_workers, n_items));
    if (n_workers <= 1) {
        for (std::size_t i = 0; i < n_items; ++i) work(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        while (!failed.load()) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n_items) return;
            try {
                work(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                failed.store(true);
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker);
    for (auto& thread : threads) thread.join();
    if (first_error) std::rethrow_exception(first_error);
}

void write_summary(const RunConfig& config, const json& summary) {
    fs::create_directories(config.out_dir);
    util::write_file(fs::path(config.out_dir) / "summary.json", summary.dump(2) + "\n");
}

double mean_of(const std::vector<double>& values) {
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    double sum = 0.0;
    for (double value : values) sum += value;
    return sum / static_cast<double>(values.size());
}

double sample_sd(const std::vector<double>& values) {
    if (values.size() < 2) return 0.0;
    const double mean = mean_of(values);
    double sum_sq = 0.0;
    for (double value : values) sum_sq += (value - mean) * (value - mean);
    return std::sqrt(sum_sq / static_cast<double>(values.size() - 1));
}

} // namespace

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_validate(const RunConfig& config, std::ostream& log) {
    const corpus::Corpus c = load_corpus(config);
    const auto pairs = corpus::engagement_pairs(c);
    const auto tutors = c.tutor_ids();

    log << "submissions: " << c.counts.submissions_read << " in " << c.streams.size()
        << " streams\n";
    log << "feedback: " << c.counts.feedback_read << " read, " << c.counts.feedback_linked
        << " linked\n";
    log << "ratings: " << c.counts.ratings_read << " read, " << c.counts.ratings_linked
        << " linked, " << c.counts.ratings_dropped << " dropped\n";
    log << "engagement pairs: " << pairs.size() << "\n";
    log << "tutors:";
    for (const auto& tutor : tutors) log << " " << tutor;
    log << "\n";
    for (const auto& warning : c.warnings) log << "warning: " << warning << "\n";

    json summary;
    summary["command"] = "validate";
    summary["counts"] = {{"submissions", c.counts.submissions_read},
                         {"streams", c.streams.size()},
                         {"feedback_read", c.counts.feedback_read},
                         {"feedback_linked", c.counts.feedback_linked},
                         {"ratings_read", c.counts.ratings_read},
                         {"ratings_linked", c.counts.ratings_linked},
                         {"ratings_dropped", c.counts.ratings_dropped},
                         {"engagement_pairs", pairs.size()}};
    summary["tutors"] = tutors;
    summary["warnings"] = c.warnings;
    write_summary(config, summary);
    log << "corpus OK\n";
    return 0;
}

int cmd_annotate(const RunConfig& config, AnnotateTarget which, std::ostream& log) {
    const corpus::Corpus c = load_corpus(config);
    auto backend = make_backend(config);
    judge::AnnotatorConfig annotator_config;
    annotator_config.cache_dir = config.cache_path();
    judge::Annotator annotator(*backend, annotator_config);

    const fs::path dir = config.annotations_path();
    fs::create_directories(dir);

    std::vector<std::string> warnings;
    json summary;
    summary["command"] = "annotate";

    if (which == AnnotateTarget::pedagogy || which == AnnotateTarget::both) {
        const auto contexts = corpus::feedback_contexts(c);
        std::vector<std::optional<judge::PedagogyAnnotation>> slots(contexts.size());
        std::vector<std::string> item_warnings(contexts.size());
        run_parallel(contexts.size(), config.parallelism, [&](std::size_t i) {
            const auto& context = contexts[i];
            std::vector<judge::PriorAttempt> prior;
            for (const auto& submission : context.stream->submissions) {
                if (submission.attempt_index >= context.submission->attempt_index) break;
                const auto fb = c.feedback_by_submission.find(submission.submission_id);
                prior.push_back({submission.code,
                                 fb == c.feedback_by_submission.end() ? "" : fb->second.text});
            }
            try {
                slots[i] = annotator.annotate_pedagogy(context.submission->problem_id, prior,
                                                       context.submission->code, *context.feedback);
            } catch (const AnnotationError& error) {
                item_warnings[i] = "feedback '" + context.feedback->feedback_id +
                                   "' excluded from pedagogy annotations: " + error.what();
            }
        });
        std::vector<judge::PedagogyAnnotation> annotations;
        for (std::size_t i = 0; i < slots.size(); ++i) {
            if (slots[i]) {
                annotations.push_back(std::move(*slots[i]));
            } else {
                warnings.push_back(item_warnings[i]);
            }
        }
        judge::write_pedagogy_annotations(dir / "pedagogy.jsonl", annotations);
        log << "pedagogy: " << annotations.size() << "/" << contexts.size()
            << " feedback messages annotated -> " << (dir / "pedagogy.jsonl").string() << "\n";
        summary["pedagogy"] = {{"items", contexts.size()}, {"annotated", annotations.size()}};
    }

    if (which == AnnotateTarget::engagement || which == AnnotateTarget::both) {
        const auto pairs = corpus::engagement_pairs(c);
        std::vector<std::optional<judge::EngagementAnnotation>> slots(pairs.size());
        std::vector<std::string> item_warnings(pairs.size());
        run_parallel(pairs.size(), config.parallelism, [&](std::size_t i) {
            const auto& pair = pairs[i];
            try {
                slots[i] = annotator.annotate_engagement(pair.prev->code, *pair.feedback,
                                                         pair.next->code);
            } catch (const AnnotationError& error) {
                item_warnings[i] = "feedback '" + pair.feedback->feedback_id +
                                   "' excluded from engagement annotations: " + error.what();
            }
        });
        std::vector<judge::EngagementAnnotation> annotations;
        for (std::size_t i = 0; i < slots.size(); ++i) {
            if (slots[i]) {
                annotations.push_back(std::move(*slots[i]));
            } else {
                warnings.push_back(item_warnings[i]);
            }
        }
        judge::write_engagement_annotations(dir / "engagement.jsonl", annotations);
        log << "engagement: " << annotations.size() << "/" << pairs.size()
            << " pairs annotated -> " << (dir / "engagement.jsonl").string() << "\n";
        summary["engagement"] = {{"items", pairs.size()}, {"annotated", annotations.size()}};
    }

    const judge::AnnotatorStats stats = annotator.stats();
    log << "cache hits: " << stats.cache_hits << ", misses: " << stats.cache_misses
        << ", backend requests: " << stats.backend_requests << ", reprompts: " << stats.reprompts
        << ", sentence parse failures: " << stats.sentence_parse_failures << "\n";
    for (const auto& warning : warnings) log << "warning: " << warning << "\n";

    summary["stats"] = {{"cache_hits", stats.cache_hits},
                        {"cache_misses", stats.cache_misses},
                        {"backend_requests", stats.backend_requests},
                        {"reprompts", stats.reprompts},
                        {"sentence_parse_failures", stats.sentence_parse_failures}};
    summary["warnings"] = warnings;
    write_summary(config, summary);
    return 0;
}

int cmd_evaluate(const RunConfig& config, std::ostream& log) {
    const corpus::Corpus c = load_corpus(config);

    const fs::path annotations_dir = config.annotations_path();
    const fs::path pedagogy_path = annotations_dir / "pedagogy.jsonl";
    const fs::path engagement_path = annotations_dir / "engagement.jsonl";
    if (!fs::exists(pedagogy_path) || !fs::exists(engagement_path)) {
        throw StateError("missing annotations under '" + annotations_dir.string() +
                         "': run the annotate command first");
    }
    const auto pedagogy = judge::load_pedagogy_annotations(pedagogy_path);
    const auto engagement = judge::load_engagement_annotations(engagement_path);

    std::vector<std::string> warnings = c.warnings;

    auto locate = [&c](const std::string& feedback_id) -> const corpus::Submission* {
        const corpus::FeedbackMessage* feedback = c.find_feedback(feedback_id);
        if (feedback == nullptr) {
            throw StateError("annotation references unknown feedback '" + feedback_id + "'");
        }
        return c.find_submission(feedback->submission_id);
    };

    std::vector<metrics::PedagogyRow> pedagogy_rows;
    pedagogy_rows.reserve(pedagogy.size());
    for (const auto& annotation : pedagogy) {
        const corpus::Submission* submission = locate(annotation.feedback_id);
        pedagogy_rows.push_back(
            {submission->tutor_id, std::to_string(submission->assignment_id), annotation});
    }
    std::vector<metrics::EngagementScoreRow> engagement_rows;
    std::vector<metrics::EngagementScores> scores;
    engagement_rows.reserve(engagement.size());
    for (const auto& annotation : engagement) {
        const corpus::Submission* submission = locate(annotation.feedback_id);
        const metrics::EngagementScores s = metrics::engagement_scores(annotation);
        scores.push_back(s);
        engagement_rows.push_back(
            {submission->tutor_id, std::to_string(submission->assignment_id), s});
    }

    const auto pairs = corpus::engagement_pairs(c);
    if (pedagogy.size() < c.counts.feedback_linked) {
        warnings.push_back(std::to_string(c.counts.feedback_linked - pedagogy.size()) +
                           " feedback messages lack a pedagogy annotation");
    }
    if (engagement.size() < pairs.size()) {
        warnings.push_back(std::to_string(pairs.size() - engagement.size()) +
                           " engagement pairs lack an engagement annotation");
    }

    const fs::path out_dir = config.out_dir;
    const fs::path tables = out_dir / "tables";
    const fs::path figures = out_dir / "figures";
    fs::create_directories(tables);
    fs::create_directories(figures);

    json payloads;
    std::vector<stats::StatResult> stat_results;

    // Per-group descriptive table (engagement by assignment, DAMR by dimension).
    std::vector<metrics::GroupSummary> groups = metrics::aggregate_engagement(engagement_rows);
    {
        const auto damr_groups = metrics::aggregate_pedagogy(pedagogy_rows, config.rubric);
        groups.insert(groups.end(), damr_groups.begin(), damr_groups.end());
    }
    util::write_file(tables / "groups.csv", metrics::metric_table_csv(groups));
    payloads["groups"] = json::array();
    for (const auto& group : groups) {
        payloads["groups"].push_back({{"tutor", group.tutor_id},
                                      {"group", group.group},
                                      {"metric", group.metric},
                                      {"mean", group.mean},
                                      {"sd", group.sd},
                                      {"n", group.n},
                                      {"n_excluded", group.n_excluded}});
    }

    const auto tutors = c.tutor_ids();
    const bool comparable = tutors.size() == 2;
    std::string tutor_a;
    std::string tutor_b;
    if (comparable) {
        tutor_a = tutors[0];
        tutor_b = tutors[1];
        // The configured baseline cohort is listed first.
        if (config.baseline_tutor == tutor_b) std::swap(tutor_a, tutor_b);
    } else {
        warnings.push_back("tutor comparison skipped: need exactly 2 tutor cohorts, found " +
                           std::to_string(tutors.size()));
    }

    std::vector<metrics::DamrCell> overall_cells;
    if (comparable && !pedagogy_rows.empty()) {
        overall_cells = metrics::damr_by_dimension(pedagogy_rows, config.rubric);
    }
    auto overall_cell = [&overall_cells](const std::string& tutor, std::string_view dimension)
        -> const metrics::DamrCell* {
        for (const auto& cell : overall_cells) {
            if (cell.tutor_id == tutor && cell.dimension == dimension) return &cell;
        }
        return nullptr;
    };

    // --- DAMR comparison: Fisher exact per dimension, Holm across the family ---
    if (comparable && !pedagogy_rows.empty()) {
        std::vector<report::DamrComparisonRow> rows;
        std::vector<double> fisher_p;
        for (const auto& name : dimension_names()) {
            const metrics::DamrCell* a = overall_cell(tutor_a, name);
            const metrics::DamrCell* b = overall_cell(tutor_b, name);
            if (a == nullptr || b == nullptr) continue;
            report::DamrComparisonRow row;
            row.dimension = std::string(name);
            row.rate_a = a->result.rate;
            row.matched_a = a->result.matched;
            row.total_a = a->result.total;
            row.rate_b = b->result.rate;
            row.matched_b = b->result.matched;
            row.total_b = b->result.total;
            row.cohens_h = stats::cohens_h(row.rate_a, row.rate_b);
            const stats::ContingencyTable2x2 table{
                static_cast<long long>(row.matched_a),
                static_cast<long long>(row.total_a - row.matched_a),
                static_cast<long long>(row.matched_b),
                static_cast<long long>(row.total_b - row.matched_b)};
            fisher_p.push_back(stats::fisher_exact_two_sided(table));
            rows.push_back(std::move(row));
        }
        const auto adjusted = stats::holm_adjust(fisher_p);
        payloads["damr"] = json::array();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            rows[i].p_holm = adjusted[i];
            stats::StatResult result;
            result.test_name = "fisher_exact";
            result.group = rows[i].dimension;
            result.statistic = static_cast<double>(rows[i].matched_a);
            result.effect_size = rows[i].cohens_h;
            result.p_raw = fisher_p[i];
            result.p_holm = adjusted[i];
            result.family_id = "damr";
            result.n_a = rows[i].total_a;
            result.n_b = rows[i].total_b;
            stat_results.push_back(std::move(result));
            payloads["damr"].push_back({{"dimension", rows[i].dimension},
                                        {"rate_a", rows[i].rate_a},
                                        {"rate_b", rows[i].rate_b},
                                        {"matched_a", rows[i].matched_a},
                                        {"total_a", rows[i].total_a},
                                        {"matched_b", rows[i].matched_b},
                                        {"total_b", rows[i].total_b},
                                        {"cohens_h", rows[i].cohens_h},
                                        {"p_raw", fisher_p[i]},
                                        {"p_holm", adjusted[i]}});
        }
        const report::TableOutput table = report::emit_damr_table(rows, tutor_a, tutor_b);
        util::write_file(tables / "damr.md", table.markdown);
        util::write_file(tables / "damr.csv", table.csv);
        log << "wrote " << (tables / "damr.md").string() << "\n";
    }

    // --- Engagement comparison: Mann-Whitney per (assignment, metric) ---
    if (comparable && !engagement_rows.empty()) {
        std::set<std::string> assignment_set;
        for (const auto& row : engagement_rows) assignment_set.insert(row.assignment_id);
        std::vector<std::string> assignment_order = {"overall"};
        {
            std::vector<std::string> sorted(assignment_set.begin(), assignment_set.end());
            std::sort(sorted.begin(), sorted.end(),
                      [](const std::string& x, const std::string& y) {
                          if (x.size() != y.size()) return x.size() < y.size();
                          return x < y;
                      });
            assignment_order.insert(assignment_order.end(), sorted.begin(), sorted.end());
        }

        auto scores_for = [&engagement_rows](const std::string& tutor,
                                             const std::string& assignment,
                                             distributions::EngagementMetric metric,
                                             std::size_t& n_absent) {
            std::vector<double> values;
            for (const auto& row : engagement_rows) {
                if (row.tutor_id != tutor) continue;
                if (assignment != "overall" && row.assignment_id != assignment) continue;
                if (metric == distributions::EngagementMetric::rel) {
                    values.push_back(row.scores.rel_score);
                } else if (row.scores.succ_score) {
                    values.push_back(*row.scores.succ_score);
                } else {
                    ++n_absent;
                }
            }
            return values;
        };

        struct PendingRow {
            report::EngagementComparisonRow row;
            double p_raw = 1.0;
            double statistic = 0.0;
            std::size_t order = 0;
            std::string metric_key;
        };
        std::vector<PendingRow> pending;
        for (const auto metric :
             {distributions::EngagementMetric::rel, distributions::EngagementMetric::succ}) {
            const std::string metric_key = distributions::metric_name(metric);
            for (std::size_t a_index = 0; a_index < assignment_order.size(); ++a_index) {
                const std::string& assignment = assignment_order[a_index];
                std::size_t absent_a = 0;
                std::size_t absent_b = 0;
                const auto values_a = scores_for(tutor_a, assignment, metric, absent_a);
                const auto values_b = scores_for(tutor_b, assignment, metric, absent_b);
                if (values_a.empty() && values_b.empty() && absent_a == 0 && absent_b == 0) {
                    continue; // assignment absent from both cohorts for this metric
                }
                if (values_a.empty() || values_b.empty()) {
                    warnings.push_back("engagement comparison skipped for assignment '" +
                                       assignment + "' " + metric_key +
                                       ": a cohort has no defined scores");
                    continue;
                }
                PendingRow entry;
                entry.metric_key = metric_key;
                entry.order = a_index * 2 +
                              (metric == distributions::EngagementMetric::rel ? 0 : 1);
                entry.row.assignment = assignment;
                entry.row.metric = metric_key;
                entry.row.mean_a = mean_of(values_a);
                entry.row.sd_a = sample_sd(values_a);
                entry.row.n_a = values_a.size();
                entry.row.n_excluded_a = absent_a;
                entry.row.mean_b = mean_of(values_b);
                entry.row.sd_b = sample_sd(values_b);
                entry.row.n_b = values_b.size();
                entry.row.n_excluded_b = absent_b;
                const stats::MannWhitneyResult test = stats::mann_whitney_u(values_a, values_b);
                entry.p_raw = test.p_value;
                entry.statistic = test.u;
                pending.push_back(std::move(entry));
            }
        }
        for (const char* metric_key : {"rel_score", "succ_score"}) {
            std::vector<std::size_t> indices;
            std::vector<double> p_values;
            for (std::size_t i = 0; i < pending.size(); ++i) {
                if (pending[i].metric_key == metric_key) {
                    indices.push_back(i);
                    p_values.push_back(pending[i].p_raw);
                }
            }
            const auto adjusted = stats::holm_adjust(p_values);
            for (std::size_t k = 0; k < indices.size(); ++k) {
                PendingRow& entry = pending[indices[k]];
                entry.row.p_holm = adjusted[k];
                stats::StatResult result;
                result.test_name = "mann_whitney_u";
                result.group = "assignment " + entry.row.assignment;
                result.statistic = entry.statistic;
                result.p_raw = entry.p_raw;
                result.p_holm = adjusted[k];
                result.family_id = std::string("engagement:") + metric_key;
                result.n_a = entry.row.n_a;
                result.n_b = entry.row.n_b;
                stat_results.push_back(std::move(result));
            }
        }
        std::sort(pending.begin(), pending.end(),
                  [](const PendingRow& x, const PendingRow& y) { return x.order < y.order; });
        std::vector<report::EngagementComparisonRow> rows;
        payloads["engagement"] = json::array();
        for (const auto& entry : pending) {
            payloads["engagement"].push_back({{"assignment", entry.row.assignment},
                                              {"metric", entry.row.metric},
                                              {"mean_a", entry.row.mean_a},
                                              {"sd_a", entry.row.sd_a},
                                              {"n_a", entry.row.n_a},
                                              {"n_excluded_a", entry.row.n_excluded_a},
                                              {"mean_b", entry.row.mean_b},
                                              {"sd_b", entry.row.sd_b},
                                              {"n_b", entry.row.n_b},
                                              {"n_excluded_b", entry.row.n_excluded_b},
                                              {"u", entry.statistic},
                                              {"p_raw", entry.p_raw},
                                              {"p_holm", entry.row.p_holm}});
            rows.push_back(entry.row);
        }
        const report::TableOutput table = report::emit_engagement_table(rows, tutor_a, tutor_b);
        util::write_file(tables / "engagement.md", table.markdown);
        util::write_file(tables / "engagement.csv", table.csv);
        log << "wrote " << (tables / "engagement.md").string() << "\n";
    }

    // --- Per-assignment DAMR deltas (grouped bar chart) ---
    if (comparable && !pedagogy_rows.empty()) {
        std::vector<metrics::PedagogyRow> rows_a;
        std::vector<metrics::PedagogyRow> rows_b;
        for (const auto& row : pedagogy_rows) {
            (row.tutor_id == tutor_a ? rows_a : rows_b).push_back(row);
        }
        try {
            const auto cells_a = metrics::damr_by_assignment(rows_a, config.rubric);
            const auto cells_b = metrics::damr_by_assignment(rows_b, config.rubric);
            const auto deltas = metrics::damr_delta(cells_a, cells_b);
            std::vector<std::string> omit;
            for (const auto& name : dimension_names()) {
                const metrics::DamrCell* a = overall_cell(tutor_a, name);
                const metrics::DamrCell* b = overall_cell(tutor_b, name);
                if (a == nullptr || b == nullptr) continue;
                const bool pinned_a = a->result.rate == 0.0 || a->result.rate == 1.0;
                const bool pinned_b = b->result.rate == 0.0 || b->result.rate == 1.0;
                if (pinned_a && pinned_b && a->result.rate == b->result.rate) {
                    omit.emplace_back(name);
                    warnings.push_back("dimension '" + std::string(name) +
                                       "' omitted from the delta chart: no variance in either "
                                       "cohort");
                }
            }
            const report::DeltaChart chart = report::emit_delta_chart(deltas, omit);
            util::write_file(figures / "delta.svg", chart.svg);
            util::write_file(tables / "delta.csv", chart.csv);
            payloads["delta"] = json::array();
            for (const auto& delta : deltas) {
                payloads["delta"].push_back({{"assignment", delta.assignment_id},
                                             {"dimension", delta.dimension},
                                             {"delta_points", delta.delta_points}});
            }
            payloads["delta_omitted"] = omit;
            log << "wrote " << (figures / "delta.svg").string() << "\n";
        } catch (const ValidationError& error) {
            warnings.push_back(std::string("delta chart skipped: ") + error.what());
        }
    }

    // --- Engagement split by pedagogy desiredness ---
    {
        std::vector<distributions::DesirednessSplit> splits = distributions::split_by_desiredness(
            pedagogy_rows, scores, config.rubric, distributions::EngagementMetric::rel);
        {
            auto succ_splits = distributions::split_by_desiredness(
                pedagogy_rows, scores, config.rubric, distributions::EngagementMetric::succ);
            splits.insert(splits.end(), std::make_move_iterator(succ_splits.begin()),
                          std::make_move_iterator(succ_splits.end()));
        }
        const distributions::SplitComparison comparison =
            distributions::compare_splits(splits, config.min_undesired_n);
        for (const auto& exclusion : comparison.excluded) {
            warnings.push_back("split " + exclusion.tutor_id + "/" + exclusion.dimension + " (" +
                               exclusion.metric + ") not tested: " + exclusion.reason);
        }
        stat_results.insert(stat_results.end(), comparison.results.begin(),
                            comparison.results.end());
        util::write_file(tables / "splits.csv", distributions::split_summary_csv(splits));
        util::write_file(tables / "split_scores.csv", distributions::split_scores_csv(splits));
        payloads["splits"] = json::object();
        payloads["splits"]["tested"] = comparison.results.size();
        payloads["splits"]["excluded"] = json::array();
        for (const auto& exclusion : comparison.excluded) {
            payloads["splits"]["excluded"].push_back({{"tutor", exclusion.tutor_id},
                                                      {"dimension", exclusion.dimension},
                                                      {"metric", exclusion.metric},
                                                      {"reason", exclusion.reason},
                                                      {"n_desired", exclusion.n_desired},
                                                      {"n_undesired", exclusion.n_undesired}});
        }
        log << "wrote " << (tables / "splits.csv").string() << "\n";
    }

    // --- Helpfulness models ---
    const bool have_ratings = c.counts.ratings_linked > 0;
    if (!have_ratings) {
        warnings.push_back("regression skipped: no ratings");
        util::write_file(tables / "regression.md", "# Helpfulness models\n\nskipped: no ratings\n");
        payloads["regression"] = {{"skipped", "no ratings"}};
    } else {
        std::string baseline = config.baseline_tutor;
        if (baseline.empty()) {
            baseline = tutors.front();
            warnings.push_back("no baseline_tutor configured; using '" + baseline + "'");
        }
        perception::RowBuildResult built = perception::build_rows(
            c, pedagogy, scores, baseline, config.rubric, config.likert_threshold);
        warnings.insert(warnings.end(), built.warnings.begin(), built.warnings.end());
        const perception::ModelSet models = perception::run_models(built.rows);
        warnings.insert(warnings.end(), models.warnings.begin(), models.warnings.end());
        const report::TableOutput table = report::emit_regression_table(models);
        util::write_file(tables / "regression.md", table.markdown);
        util::write_file(tables / "regression.csv", table.csv);

        auto model_json = [](const std::optional<perception::ModelFit>& slot) -> json {
            if (!slot) return nullptr;
            json m;
            m["covariates"] = slot->covariates;
            m["coefficients"] = slot->fit.coefficients;
            m["standard_errors"] = slot->fit.standard_errors;
            m["p_values"] = slot->fit.p_values;
            m["log_likelihood"] = slot->fit.log_likelihood;
            m["null_log_likelihood"] = slot->fit.null_log_likelihood;
            m["pseudo_r2"] = slot->fit.pseudo_r2;
            m["n_rows"] = slot->n_rows;
            m["n_excluded"] = slot->n_excluded;
            m["dropped"] = slot->dropped;
            m["converged"] = slot->fit.converged;
            m["iterations"] = slot->fit.n_iterations;
            return m;
        };
        payloads["regression"] = json::object();
        payloads["regression"]["pedagogy_only"] = model_json(models.pedagogy_only);
        payloads["regression"]["engagement_only"] = model_json(models.engagement_only);
        payloads["regression"]["combined"] = model_json(models.combined);
        payloads["regression"]["rows"] = {{"built", built.rows.size()},
                                          {"n_ratings", built.n_ratings},
                                          {"n_missing_pedagogy", built.n_missing_pedagogy},
                                          {"n_missing_engagement", built.n_missing_engagement},
                                          {"n_missing_succ", built.n_missing_succ}};
        log << "wrote " << (tables / "regression.md").string() << "\n";
    }

    util::write_file(tables / "stat_tests.csv", stats::stat_results_csv(stat_results));

    std::size_t stream_final_feedback = 0;
    for (const auto& context : corpus::feedback_contexts(c)) {
        if (context.next == nullptr) ++stream_final_feedback;
    }
    payloads["counts"] = {{"submissions", c.counts.submissions_read},
                          {"streams", c.streams.size()},
                          {"feedback_linked", c.counts.feedback_linked},
                          {"ratings_linked", c.counts.ratings_linked},
                          {"engagement_pairs", pairs.size()},
                          {"pedagogy_annotations", pedagogy.size()},
                          {"engagement_annotations", engagement.size()},
                          {"stream_final_feedback", stream_final_feedback}};

    report::RunSummary summary;
    summary.tool_version = kToolVersion;
    summary.corpus_digests["submissions"] = util::content_key(util::read_file(config.submissions));
    summary.corpus_digests["feedback"] = util::content_key(util::read_file(config.feedback));
    if (!config.ratings.empty()) {
        summary.corpus_digests["ratings"] = util::content_key(util::read_file(config.ratings));
    }
    json rubric_json = json::object();
    for (const auto& [dimension, labels] : config.rubric.desired_by_dimension()) {
        rubric_json[dimension] = labels;
    }
    summary.config_snapshot = {
        {"backend",
         {{"kind", config.backend.kind},
          {"model",
           config.backend.kind == "remote" ? config.backend.remote.model : "scripted"}}},
        {"baseline_tutor", config.baseline_tutor},
        {"likert_threshold", config.likert_threshold},
        {"min_undesired_n", config.min_undesired_n},
        {"rubric", rubric_json}};
    summary.payloads = std::move(payloads);
    summary.warnings = warnings;
    util::write_file(out_dir / "summary.json", report::summary_json(summary));

    for (const auto& warning : warnings) log << "warning: " << warning << "\n";
    log << "report written to " << out_dir.string() << "\n";
    return 0;
}

int cmd_synth(const RunConfig& config, std::ostream& log) {
    synthgen::GeneratorConfig generator = config.synth;
    generator.seed = config.seed;
    generator.validate();
    const synthgen::GenerationResult result = synthgen::generate(generator, config.out_dir);
    log << "submissions: " << result.n_submissions << " in " << result.n_streams
        << " streams -> " << result.submissions_path.string() << "\n";
    log << "feedback: " << result.n_feedback << " (" << result.n_sentences << " sentences) -> "
        << result.feedback_path.string() << "\n";
    log << "ratings: " << result.n_ratings << " -> " << result.ratings_path.string() << "\n";
    log << "engagement pairs: " << result.n_engagement_pairs << "\n";
    log << "judge transcript -> " << result.transcript_path.string() << "\n";
    log << "ground truth -> " << result.ground_truth_path.string() << "\n";

    json summary;
    summary["command"] = "synth";
    summary["seed"] = generator.seed;
    summary["counts"] = {{"streams", result.n_streams},
                         {"submissions", result.n_submissions},
                         {"feedback", result.n_feedback},
                         {"sentences", result.n_sentences},
                         {"engagement_pairs", result.n_engagement_pairs},
                         {"ratings", result.n_ratings}};
    summary["files"] = {result.submissions_path.filename().string(),
                        result.feedback_path.filename().string(),
                        result.ratings_path.filename().string(),
                        result.transcript_path.filename().string(),
                        result.ground_truth_path.filename().string()};
    write_summary(config, summary);
    return 0;
}

int cmd_agreement(const RunConfig& config, const fs::path& annotations_a,
                  const fs::path& annotations_b, std::ostream& log) {
    for (const fs::path* path : {&annotations_a, &annotations_b}) {
        if (!fs::exists(*path)) throw ConfigError("annotation file not found: " + path->string());
    }
    const judge::AgreementReport agreement = judge::agreement_report(annotations_a, annotations_b);
    log << "shared items: " << agreement.shared_items << "\n";
    for (const auto& dimension : agreement.dimensions) {
        log << dimension.dimension << ": kappa " << util::format_fixed(dimension.kappa, 4)
            << ", agreement " << util::format_fixed(dimension.percent_agreement * 100.0, 2)
            << "%, n " << dimension.n_items;
        if (dimension.constant_rater) log << " (constant rater)";
        log << "\n";
    }
    log << "macro kappa: " << util::format_fixed(agreement.macro_kappa, 4) << "\n";
    for (const auto& warning : agreement.warnings) log << "warning: " << warning << "\n";

    json summary;
    summary["command"] = "agreement";
    summary["shared_items"] = agreement.shared_items;
    summary["macro_kappa"] = agreement.macro_kappa;
    summary["dimensions"] = json::array();
    for (const auto& dimension : agreement.dimensions) {
        summary["dimensions"].push_back({{"dimension", dimension.dimension},
                                         {"kappa", dimension.kappa},
                                         {"percent_agreement", dimension.percent_agreement},
                                         {"constant_rater", dimension.constant_rater},
                                         {"n_items", dimension.n_items}});
    }
    summary["warnings"] = agreement.warnings;
    write_summary(config, summary);
    return 0;
}

int exit_code_for(const std::exception& error) {
    if (dynamic_cast<const ConfigError*>(&error) != nullptr) return 2;
    if (dynamic_cast<const ValidationError*>(&error) != nullptr) return 2;
    if (dynamic_cast<const BackendError*>(&error) != nullptr) return 3;
    // StateError, AnnotationError, StatError and anything unexpected: the
    // pipeline is in a state it cannot proceed from.
    return 4;
}

int run_command(const std::function<int()>& body, std::ostream& err) {
    try {
        return body();
    } catch (const std::exception& error) {
        err << "error: " << error.what() << "\n";
        return exit_code_for(error);
    }
}

} // namespace tutoreval::pipeline
