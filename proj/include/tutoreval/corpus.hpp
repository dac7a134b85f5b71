#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tutoreval::corpus {

/// One autograded attempt by one student on one problem.
struct Submission {
    std::string submission_id;
    std::string tutor_id; // cohort label, e.g. "baseline" / "misconception"
    std::string student_id;
    int assignment_id = 0;
    std::string problem_id;
    int attempt_index = 0;
    std::string timestamp; // ISO-8601 instant; ordering validation only
    std::string code;
    std::string autograder_output;
    bool passed = false;

    bool operator==(const Submission&) const = default;
};

/// Tutor response attached to a failed submission.
struct FeedbackMessage {
    std::string feedback_id;
    std::string submission_id;
    std::string text;
    std::vector<std::string> sentences; // filled by judge::segment_sentences

    bool operator==(const FeedbackMessage&) const = default;
};

struct Rating {
    std::string submission_id;
    int likert = 0; // 1..5

    bool operator==(const Rating&) const = default;
};

/// Ordered attempts of one student on one problem.
struct SubmissionStream {
    std::string student_id;
    std::string problem_id;
    std::string tutor_id;
    int assignment_id = 0;
    std::vector<Submission> submissions; // ordered by attempt_index

    bool operator==(const SubmissionStream&) const = default;
};

struct CorpusCounts {
    std::size_t submissions_read = 0;
    std::size_t feedback_read = 0;
    std::size_t feedback_linked = 0;
    std::size_t ratings_read = 0;
    std::size_t ratings_linked = 0;
    std::size_t ratings_dropped = 0;

    bool operator==(const CorpusCounts&) const = default;
};

struct Corpus {
    std::vector<SubmissionStream> streams; // sorted by (student_id, problem_id)
    std::map<std::string, FeedbackMessage> feedback_by_submission;
    std::map<std::string, Rating> ratings_by_submission;
    CorpusCounts counts;
    std::vector<std::string> warnings;

    const Submission* find_submission(const std::string& submission_id) const;
    const SubmissionStream* stream_of(const std::string& submission_id) const;
    const FeedbackMessage* find_feedback(const std::string& feedback_id) const;

    /// Distinct tutor ids in sorted order.
    std::vector<std::string> tutor_ids() const;
};

/// (previous failed submission, its feedback, next submission) — the unit
/// rel/succ are judged over. Pointers remain valid while the corpus lives.
struct EngagementPair {
    const Submission* prev = nullptr;
    const FeedbackMessage* feedback = nullptr;
    const Submission* next = nullptr;
};

/// Feedback joined with its submission and stream, in deterministic stream
/// order. `next` is null for stream-final submissions (abandonment).
struct FeedbackContext {
    const FeedbackMessage* feedback = nullptr;
    const Submission* submission = nullptr;
    const SubmissionStream* stream = nullptr;
    const Submission* next = nullptr;
};

/// Parse and validate the three line-delimited JSON inputs. Hard failures
/// (malformed lines, broken references, duplicates, ordering violations)
/// throw ValidationError naming the file and line or the offending ids; soft
/// issues (unknown keys, droppable ratings) land in Corpus::warnings.
Corpus parse_corpus(const std::filesystem::path& submissions_path,
                    const std::filesystem::path& feedback_path,
                    const std::optional<std::filesystem::path>& ratings_path = std::nullopt);

/// One pair per failed, feedback-bearing submission that has a successor.
std::vector<EngagementPair> engagement_pairs(const Corpus& corpus);

/// All feedback in stream order, whether or not a successor exists.
std::vector<FeedbackContext> feedback_contexts(const Corpus& corpus);

/// Serialize back to the input formats (deterministic order; re-parsing
/// yields an identical object graph).
void write_corpus(const Corpus& corpus, const std::filesystem::path& submissions_path,
                  const std::filesystem::path& feedback_path,
                  const std::filesystem::path& ratings_path);

} // namespace tutoreval::corpus
