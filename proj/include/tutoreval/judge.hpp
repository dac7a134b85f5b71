#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "tutoreval/corpus.hpp"
#include "tutoreval/dimensions.hpp"

namespace tutoreval::judge {

// ---------------------------------------------------------------------------
// Sentence segmentation
// ---------------------------------------------------------------------------

/// Splits feedback text into sentences. A split happens after '.', '!' or '?'
/// followed by whitespace and then an uppercase letter or digit. Dotted
/// abbreviations ("e.g.", "i.e.", "etc.", ...) never end a sentence, and
/// backtick code spans (inline or fenced) are atomic: they attach to the
/// preceding sentence and are never split internally. A message that is only a
/// code block is a single sentence.
///
/// Throws ValidationError on empty/whitespace-only input. The result always
/// has at least one sentence, and joining the sentences with single spaces
/// reproduces the input up to whitespace collapsing.
std::vector<std::string> segment_sentences(const std::string& text);

// ---------------------------------------------------------------------------
// Annotation records
// ---------------------------------------------------------------------------

struct PedagogyAnnotation {
    std::string feedback_id;
    // Keyed by the 8 dimension names; values are rubric labels in {1,2,3}.
    std::map<std::string, int> labels;

    bool operator==(const PedagogyAnnotation&) const = default;
};

struct SentenceAttribution {
    int sentence_index = 0;
    int rel = 0;
    std::optional<int> succ; // present iff rel == 1
    std::string rationale;

    bool operator==(const SentenceAttribution&) const = default;
};

struct EngagementAnnotation {
    std::string feedback_id;
    std::vector<SentenceAttribution> per_sentence; // one entry per sentence, in order

    bool operator==(const EngagementAnnotation&) const = default;
};

/// Throw ValidationError if the annotation violates its invariants
/// (all 8 dimensions present, labels in range).
void validate(const PedagogyAnnotation& annotation);

/// Throw ValidationError if per-sentence entries are out of order, rel/succ
/// bits are invalid, succ presence does not match rel, or a rel=1 sentence
/// lacks a rationale. `sentence_count`, when given, additionally pins the
/// expected list length.
void validate(const EngagementAnnotation& annotation,
              std::optional<std::size_t> sentence_count = std::nullopt);

// ---------------------------------------------------------------------------
// Judge backends
// ---------------------------------------------------------------------------

struct BackendIdentity {
    std::string name;
    std::string model;
    double temperature = 0.0;

    /// Stable string form used in cache keys and reply metadata.
    std::string describe() const;
};

struct JudgeRequest {
    std::string item_key; // e.g. "pedagogy:fb-12"; identifies the work item
    std::string prompt;   // fully rendered prompt text
};

class JudgeBackend {
public:
    virtual ~JudgeBackend() = default;
    virtual const BackendIdentity& identity() const = 0;
    /// Returns the raw reply text. Throws BackendError when the backend cannot
    /// produce a reply (transport failure after retries, missing script, ...).
    virtual std::string complete(const JudgeRequest& request) = 0;
};

/// Scripted backend for tests and offline runs. Replies are keyed by
/// item_key; an entry may hold a sequence of replies which are served in
/// order (the last one repeats once exhausted), which lets fixtures script a
/// malformed reply followed by a valid one.
class FixtureBackend : public JudgeBackend {
public:
    /// Loads a transcript: line-delimited JSON with objects of the form
    /// {"key": "...", "reply": "..."} or {"key": "...", "replies": ["...", ...]}.
    explicit FixtureBackend(const std::filesystem::path& transcript_path);
    explicit FixtureBackend(std::map<std::string, std::vector<std::string>> replies);

    const BackendIdentity& identity() const override;
    std::string complete(const JudgeRequest& request) override;

    /// Number of complete() calls served so far (for cache-hit assertions).
    std::size_t request_count() const;

private:
    BackendIdentity identity_{"fixture", "scripted", 0.0};
    std::map<std::string, std::vector<std::string>> replies_;
    std::map<std::string, std::size_t> cursor_;
    mutable std::mutex mutex_;
    std::atomic<std::size_t> requests_{0};
};

struct RemoteBackendConfig {
    std::string endpoint;  // full chat-completions URL, e.g. http://host:port/v1/chat/completions
    std::string model;
    std::string api_key_env = "TUTOREVAL_API_KEY"; // name of the env var holding the key
    double temperature = 0.0;
    int max_retries = 3;           // retries after the first attempt
    int initial_backoff_ms = 250;  // doubles per retry
    int timeout_seconds = 60;
};

/// Chat-completions HTTP backend. Requests use temperature from the config
/// (0.0 by default) and are retried with exponential backoff; after the retry
/// budget is exhausted a BackendError is thrown. The API key is read from the
/// environment variable named in the config, never from the config itself.
class RemoteBackend : public JudgeBackend {
public:
    explicit RemoteBackend(RemoteBackendConfig config);

    const BackendIdentity& identity() const override;
    std::string complete(const JudgeRequest& request) override;

private:
    RemoteBackendConfig config_;
    BackendIdentity identity_;
    std::string scheme_host_; // e.g. "http://localhost:8080"
    std::string path_;        // e.g. "/v1/chat/completions"
    std::string api_key_;
};

// ---------------------------------------------------------------------------
// Reply cache
// ---------------------------------------------------------------------------

/// Content-addressed on-disk store of raw judge replies. Each entry is one
/// file named <key>.json holding a single JSON line with the raw reply plus
/// metadata. Writes go through a temp file + rename, so concurrent writers of
/// the same key are safe and readers never observe partial entries.
class ReplyCache {
public:
    explicit ReplyCache(std::filesystem::path directory);

    const std::filesystem::path& directory() const { return directory_; }

    std::optional<std::string> lookup(const std::string& key) const;
    void store(const std::string& key,
               const std::string& reply,
               const std::string& backend_identity,
               const std::string& item_key);

    std::size_t entry_count() const;

private:
    std::filesystem::path directory_;
};

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

/// Built-in prompt texts; the files under templates/ carry the same content
/// and can be edited or swapped via configuration.
const std::string& default_pedagogy_template();
const std::string& default_engagement_template();

/// Replaces each "{name}" for the provided names with its value. Text not
/// matching a known placeholder (including JSON braces in the reply-format
/// examples) is left untouched.
std::string render_template(const std::string& template_text,
                            const std::map<std::string, std::string>& values);

/// Rubric text inserted at {rubric}: one block per dimension with its question
/// and label meanings (desired labels are deliberately not disclosed).
std::string render_rubric_text();

std::string pedagogy_item_key(const std::string& feedback_id);
std::string engagement_item_key(const std::string& feedback_id);

// ---------------------------------------------------------------------------
// Reply parsing (exposed for tests and for re-deriving from cached replies)
// ---------------------------------------------------------------------------

/// Parses a pedagogy judge reply. Accepts the strict JSON object, optionally
/// wrapped in a markdown code fence. Throws AnnotationError when the reply
/// cannot be read as a complete, in-range label object.
PedagogyAnnotation parse_pedagogy_reply(const std::string& reply,
                                        const std::string& feedback_id);

struct EngagementParseResult {
    EngagementAnnotation annotation;
    std::size_t sentence_parse_failures = 0;
};

/// Parses an engagement judge reply. The reply as a whole must be JSON (an
/// array, or an object with a "sentences" array), otherwise AnnotationError is
/// thrown and the caller may reprompt. Individual malformed, duplicate or
/// missing sentence entries degrade to rel=0 with rationale
/// "judge-parse-failure" and are counted, never thrown.
EngagementParseResult parse_engagement_reply(const std::string& reply,
                                             const std::string& feedback_id,
                                             std::size_t sentence_count);

// ---------------------------------------------------------------------------
// Annotator
// ---------------------------------------------------------------------------

struct PriorAttempt {
    std::string code;
    std::string feedback_text; // empty when the attempt drew no feedback
};

struct AnnotatorConfig {
    // Template texts; empty means use the built-in defaults.
    std::string pedagogy_template;
    std::string engagement_template;
    // Directory for the reply cache; disabled when unset.
    std::optional<std::filesystem::path> cache_dir;
};

struct AnnotatorStats {
    std::size_t cache_hits = 0;
    std::size_t cache_misses = 0;
    std::size_t backend_requests = 0;
    std::size_t reprompts = 0;
    std::size_t sentence_parse_failures = 0;
};

/// Drives a judge backend through the reply cache. Annotations are always
/// re-derived by parsing the (possibly cached) raw reply, so parser fixes
/// apply to existing caches without re-querying. Safe for concurrent calls.
class Annotator {
public:
    Annotator(JudgeBackend& backend, AnnotatorConfig config = {});

    /// One reprompt on a malformed reply; a second malformed reply raises
    /// AnnotationError so the caller can exclude the feedback with a warning.
    PedagogyAnnotation annotate_pedagogy(const std::string& problem_statement,
                                         const std::vector<PriorAttempt>& prior_context,
                                         const std::string& code,
                                         const corpus::FeedbackMessage& feedback);

    EngagementAnnotation annotate_engagement(const std::string& prev_code,
                                             const corpus::FeedbackMessage& feedback,
                                             const std::string& next_code);

    AnnotatorStats stats() const;

private:
    std::string complete_cached(const std::string& item_key,
                                const std::string& template_text,
                                const std::string& prompt);

    JudgeBackend& backend_;
    AnnotatorConfig config_;
    std::optional<ReplyCache> cache_;
    std::atomic<std::size_t> cache_hits_{0};
    std::atomic<std::size_t> cache_misses_{0};
    std::atomic<std::size_t> backend_requests_{0};
    std::atomic<std::size_t> reprompts_{0};
    std::atomic<std::size_t> sentence_parse_failures_{0};
};

// ---------------------------------------------------------------------------
// Annotation files + inter-annotator agreement
// ---------------------------------------------------------------------------

void write_pedagogy_annotations(const std::filesystem::path& path,
                                const std::vector<PedagogyAnnotation>& annotations);
std::vector<PedagogyAnnotation> load_pedagogy_annotations(const std::filesystem::path& path);

void write_engagement_annotations(const std::filesystem::path& path,
                                  const std::vector<EngagementAnnotation>& annotations);
std::vector<EngagementAnnotation> load_engagement_annotations(const std::filesystem::path& path);

struct DimensionAgreement {
    std::string dimension;
    double kappa = 0.0;
    double percent_agreement = 0.0;
    bool constant_rater = false;
    std::size_t n_items = 0;
};

struct AgreementReport {
    std::vector<DimensionAgreement> dimensions;
    double macro_kappa = 0.0;
    std::size_t shared_items = 0;
    std::vector<std::string> warnings;
};

/// Compares two annotation files of the same kind (pedagogy or engagement).
/// Items are matched by id (feedback id, or feedback id + sentence index);
/// disjoint id sets are an error, partial overlap is reported as a warning.
AgreementReport agreement_report(const std::filesystem::path& annotations_a,
                                 const std::filesystem::path& annotations_b);

} // namespace tutoreval::judge
