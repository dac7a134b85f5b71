#include "tutoreval/corpus.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tutoreval/errors.hpp"
#include "tutoreval/util.hpp"

namespace tutoreval::corpus {

using nlohmann::json;

namespace {

json parse_line(std::string_view line, const std::filesystem::path& path, std::size_t line_no) {
    json record = json::parse(line, nullptr, false);
    if (record.is_discarded() || !record.is_object()) {
        throw ValidationError("malformed record in " + path.string() + " line " +
                              std::to_string(line_no));
    }
    return record;
}

void warn_unknown_keys(const json& record, const std::set<std::string>& known,
                       const std::filesystem::path& path, std::size_t line_no,
                       std::vector<std::string>& warnings) {
    for (const auto& [key, value] : record.items()) {
        if (!known.count(key)) {
            warnings.push_back("ignoring unknown key \"" + key + "\" in " +
                               path.filename().string() + " line " + std::to_string(line_no));
        }
    }
}

template <typename T>
T require_field(const json& record, const char* key, const std::filesystem::path& path,
                std::size_t line_no) {
    auto it = record.find(key);
    if (it == record.end()) {
        throw ValidationError("missing field \"" + std::string(key) + "\" in " + path.string() +
                              " line " + std::to_string(line_no));
    }
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ValidationError("field \"" + std::string(key) + "\" has wrong type in " +
                              path.string() + " line " + std::to_string(line_no));
    }
}

std::string stream_label(const SubmissionStream& stream) {
    return "(" + stream.student_id + ", " + stream.problem_id + ")";
}

void validate_stream(const SubmissionStream& stream) {
    const auto& subs = stream.submissions;
    double prev_time = 0.0;
    for (std::size_t i = 0; i < subs.size(); ++i) {
        if (subs[i].attempt_index != static_cast<int>(i)) {
            throw ValidationError("stream " + stream_label(stream) +
                                  ": attempt_index values are not consecutive from 0");
        }
        auto t = util::parse_iso8601(subs[i].timestamp);
        if (!t) {
            throw ValidationError("submission " + subs[i].submission_id +
                                  ": unparseable timestamp \"" + subs[i].timestamp + "\"");
        }
        if (i > 0 && *t <= prev_time) {
            throw ValidationError("stream " + stream_label(stream) +
                                  ": timestamps are not strictly increasing at attempt " +
                                  std::to_string(i));
        }
        prev_time = *t;
        if (subs[i].passed && i + 1 != subs.size()) {
            throw ValidationError("stream " + stream_label(stream) + ": passed submission " +
                                  subs[i].submission_id + " is not the final attempt");
        }
        if (subs[i].tutor_id != stream.tutor_id) {
            throw ValidationError("stream " + stream_label(stream) + ": inconsistent tutor_id");
        }
        if (subs[i].assignment_id != stream.assignment_id) {
            throw ValidationError("stream " + stream_label(stream) +
                                  ": inconsistent assignment_id");
        }
    }
}

} // namespace

const Submission* Corpus::find_submission(const std::string& submission_id) const {
    for (const auto& stream : streams) {
        for (const auto& sub : stream.submissions) {
            if (sub.submission_id == submission_id) return &sub;
        }
    }
    return nullptr;
}

const SubmissionStream* Corpus::stream_of(const std::string& submission_id) const {
    for (const auto& stream : streams) {
        for (const auto& sub : stream.submissions) {
            if (sub.submission_id == submission_id) return &stream;
        }
    }
    return nullptr;
}

const FeedbackMessage* Corpus::find_feedback(const std::string& feedback_id) const {
    for (const auto& [sid, fb] : feedback_by_submission) {
        if (fb.feedback_id == feedback_id) return &fb;
    }
    return nullptr;
}

std::vector<std::string> Corpus::tutor_ids() const {
    std::set<std::string> ids;
    for (const auto& stream : streams) ids.insert(stream.tutor_id);
    return std::vector<std::string>(ids.begin(), ids.end());
}

Corpus parse_corpus(const std::filesystem::path& submissions_path,
                    const std::filesystem::path& feedback_path,
                    const std::optional<std::filesystem::path>& ratings_path) {
    Corpus corpus;

    static const std::set<std::string> kSubmissionKeys = {
        "submission_id", "tutor_id",  "student_id",        "assignment_id", "problem_id",
        "attempt_index", "timestamp", "code",              "autograder_output", "passed"};
    static const std::set<std::string> kFeedbackKeys = {"feedback_id", "submission_id", "text"};
    static const std::set<std::string> kRatingKeys = {"submission_id", "likert"};

    // submissions, grouped into streams keyed by (student_id, problem_id)
    std::map<std::pair<std::string, std::string>, SubmissionStream> by_pair;
    std::set<std::string> submission_ids;
    util::for_each_line(submissions_path, [&](std::string_view line, std::size_t line_no) {
        json record = parse_line(line, submissions_path, line_no);
        warn_unknown_keys(record, kSubmissionKeys, submissions_path, line_no, corpus.warnings);

        Submission sub;
        sub.submission_id = require_field<std::string>(record, "submission_id", submissions_path, line_no);
        sub.tutor_id = require_field<std::string>(record, "tutor_id", submissions_path, line_no);
        sub.student_id = require_field<std::string>(record, "student_id", submissions_path, line_no);
        sub.assignment_id = require_field<int>(record, "assignment_id", submissions_path, line_no);
        sub.problem_id = require_field<std::string>(record, "problem_id", submissions_path, line_no);
        sub.attempt_index = require_field<int>(record, "attempt_index", submissions_path, line_no);
        sub.timestamp = require_field<std::string>(record, "timestamp", submissions_path, line_no);
        sub.code = require_field<std::string>(record, "code", submissions_path, line_no);
        sub.autograder_output =
            require_field<std::string>(record, "autograder_output", submissions_path, line_no);
        sub.passed = require_field<bool>(record, "passed", submissions_path, line_no);

        if (sub.attempt_index < 0) {
            throw ValidationError("negative attempt_index in " + submissions_path.string() +
                                  " line " + std::to_string(line_no));
        }
        if (!submission_ids.insert(sub.submission_id).second) {
            throw ValidationError("duplicate submission_id \"" + sub.submission_id + "\" in " +
                                  submissions_path.string() + " line " + std::to_string(line_no));
        }

        auto key = std::make_pair(sub.student_id, sub.problem_id);
        auto& stream = by_pair[key];
        if (stream.submissions.empty()) {
            stream.student_id = sub.student_id;
            stream.problem_id = sub.problem_id;
            stream.tutor_id = sub.tutor_id;
            stream.assignment_id = sub.assignment_id;
        }
        stream.submissions.push_back(std::move(sub));
        ++corpus.counts.submissions_read;
    });

    corpus.streams.reserve(by_pair.size());
    for (auto& [key, stream] : by_pair) {
        std::sort(stream.submissions.begin(), stream.submissions.end(),
                  [](const Submission& a, const Submission& b) {
                      return a.attempt_index < b.attempt_index;
                  });
        validate_stream(stream);
        corpus.streams.push_back(std::move(stream));
    }

    std::map<std::string, const Submission*> submission_index;
    for (const auto& stream : corpus.streams) {
        for (const auto& sub : stream.submissions) {
            submission_index[sub.submission_id] = &sub;
        }
    }

    // feedback
    std::set<std::string> feedback_ids;
    std::vector<std::string> broken_feedback_refs;
    util::for_each_line(feedback_path, [&](std::string_view line, std::size_t line_no) {
        json record = parse_line(line, feedback_path, line_no);
        warn_unknown_keys(record, kFeedbackKeys, feedback_path, line_no, corpus.warnings);

        FeedbackMessage fb;
        fb.feedback_id = require_field<std::string>(record, "feedback_id", feedback_path, line_no);
        fb.submission_id =
            require_field<std::string>(record, "submission_id", feedback_path, line_no);
        fb.text = require_field<std::string>(record, "text", feedback_path, line_no);
        ++corpus.counts.feedback_read;

        if (util::trim(fb.text).empty()) {
            throw ValidationError("feedback " + fb.feedback_id + " has empty text (" +
                                  feedback_path.string() + " line " + std::to_string(line_no) + ")");
        }
        if (!feedback_ids.insert(fb.feedback_id).second) {
            throw ValidationError("duplicate feedback_id \"" + fb.feedback_id + "\" in " +
                                  feedback_path.string() + " line " + std::to_string(line_no));
        }

        auto sub_it = submission_index.find(fb.submission_id);
        const Submission* sub = sub_it == submission_index.end() ? nullptr : sub_it->second;
        if (sub == nullptr || sub->passed) {
            broken_feedback_refs.push_back(fb.submission_id);
            return;
        }
        if (!corpus.feedback_by_submission.emplace(fb.submission_id, std::move(fb)).second) {
            throw ValidationError("multiple feedback messages for submission \"" +
                                  record["submission_id"].get<std::string>() + "\"");
        }
        ++corpus.counts.feedback_linked;
    });
    if (!broken_feedback_refs.empty()) {
        std::ostringstream msg;
        msg << "feedback references passed or missing submissions:";
        for (const auto& id : broken_feedback_refs) msg << " \"" << id << "\"";
        throw ValidationError(msg.str());
    }

    // ratings (optional input)
    if (ratings_path) {
        util::for_each_line(*ratings_path, [&](std::string_view line, std::size_t line_no) {
            json record = parse_line(line, *ratings_path, line_no);
            warn_unknown_keys(record, kRatingKeys, *ratings_path, line_no, corpus.warnings);

            Rating rating;
            rating.submission_id =
                require_field<std::string>(record, "submission_id", *ratings_path, line_no);
            rating.likert = require_field<int>(record, "likert", *ratings_path, line_no);
            ++corpus.counts.ratings_read;

            if (rating.likert < 1 || rating.likert > 5) {
                throw ValidationError("likert rating out of range in " + ratings_path->string() +
                                      " line " + std::to_string(line_no));
            }
            if (!submission_index.count(rating.submission_id) ||
                !corpus.feedback_by_submission.count(rating.submission_id)) {
                // rating widgets may fire spuriously; drop, do not fail
                corpus.warnings.push_back("dropping rating for submission \"" +
                                          rating.submission_id + "\" without linked feedback");
                ++corpus.counts.ratings_dropped;
                return;
            }
            auto [it, inserted] = corpus.ratings_by_submission.emplace(rating.submission_id, rating);
            if (!inserted) {
                corpus.warnings.push_back("duplicate rating for submission \"" +
                                          rating.submission_id + "\"; keeping the last");
                it->second = rating; // last by file order wins
                ++corpus.counts.ratings_dropped;
            } else {
                ++corpus.counts.ratings_linked;
            }
        });
    }

    return corpus;
}

std::vector<EngagementPair> engagement_pairs(const Corpus& corpus) {
    std::vector<EngagementPair> pairs;
    for (const auto& stream : corpus.streams) {
        for (std::size_t i = 0; i + 1 < stream.submissions.size(); ++i) {
            const Submission& sub = stream.submissions[i];
            if (sub.passed) continue;
            auto it = corpus.feedback_by_submission.find(sub.submission_id);
            if (it == corpus.feedback_by_submission.end()) continue;
            pairs.push_back({&sub, &it->second, &stream.submissions[i + 1]});
        }
    }
    return pairs;
}

std::vector<FeedbackContext> feedback_contexts(const Corpus& corpus) {
    std::vector<FeedbackContext> contexts;
    for (const auto& stream : corpus.streams) {
        for (std::size_t i = 0; i < stream.submissions.size(); ++i) {
            const Submission& sub = stream.submissions[i];
            auto it = corpus.feedback_by_submission.find(sub.submission_id);
            if (it == corpus.feedback_by_submission.end()) continue;
            FeedbackContext ctx;
            ctx.feedback = &it->second;
            ctx.submission = &sub;
            ctx.stream = &stream;
            ctx.next = (i + 1 < stream.submissions.size()) ? &stream.submissions[i + 1] : nullptr;
            contexts.push_back(ctx);
        }
    }
    return contexts;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& submissions_path,
                  const std::filesystem::path& feedback_path,
                  const std::filesystem::path& ratings_path) {
    std::ostringstream submissions_out;
    std::ostringstream feedback_out;
    std::ostringstream ratings_out;

    for (const auto& stream : corpus.streams) {
        for (const auto& sub : stream.submissions) {
            json record = {
                {"submission_id", sub.submission_id},
                {"tutor_id", sub.tutor_id},
                {"student_id", sub.student_id},
                {"assignment_id", sub.assignment_id},
                {"problem_id", sub.problem_id},
                {"attempt_index", sub.attempt_index},
                {"timestamp", sub.timestamp},
                {"code", sub.code},
                {"autograder_output", sub.autograder_output},
                {"passed", sub.passed},
            };
            submissions_out << record.dump() << '\n';

            auto fb = corpus.feedback_by_submission.find(sub.submission_id);
            if (fb != corpus.feedback_by_submission.end()) {
                json fb_record = {
                    {"feedback_id", fb->second.feedback_id},
                    {"submission_id", fb->second.submission_id},
                    {"text", fb->second.text},
                };
                feedback_out << fb_record.dump() << '\n';
            }
            auto rating = corpus.ratings_by_submission.find(sub.submission_id);
            if (rating != corpus.ratings_by_submission.end()) {
                json rating_record = {
                    {"submission_id", rating->second.submission_id},
                    {"likert", rating->second.likert},
                };
                ratings_out << rating_record.dump() << '\n';
            }
        }
    }

    util::write_file(submissions_path, submissions_out.str());
    util::write_file(feedback_path, feedback_out.str());
    util::write_file(ratings_path, ratings_out.str());
}

} // namespace tutoreval::corpus
