#include "tutoreval/judge.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "tutoreval/errors.hpp"
#include "tutoreval/stats.hpp"
#include "tutoreval/util.hpp"

using nlohmann::json;

namespace tutoreval::judge {

using util::content_key;
using util::fnv1a64;
using util::format_double;
using util::read_file;
using util::replace_all;
using util::starts_with;
using util::to_lower;
using util::trim;
using util::write_file_atomic;

// ---------------------------------------------------------------------------
// Sentence segmentation
// ---------------------------------------------------------------------------

namespace {

// Dotted tokens that end in '.' without ending a sentence.
const std::set<std::string>& abbreviations() {
    static const std::set<std::string> abbrevs = {
        "e.g.", "i.e.", "etc.", "vs.", "cf.", "al.", "ca.", "fig.", "eq.",
        "approx.", "dr.", "mr.", "mrs.", "ms.", "prof.", "st.",
    };
    return abbrevs;
}

// Marks every byte inside a backtick span (inline `...` or fenced ```...```),
// fence markers included. An unterminated span runs to the end of the text.
std::vector<char> code_span_mask(const std::string& text) {
    std::vector<char> mask(text.size(), 0);
    std::size_t i = 0;
    while (i < text.size()) {
        if (text.compare(i, 3, "```") == 0) {
            std::size_t close = text.find("```", i + 3);
            std::size_t stop = close == std::string::npos ? text.size() : close + 3;
            std::fill(mask.begin() + static_cast<std::ptrdiff_t>(i),
                      mask.begin() + static_cast<std::ptrdiff_t>(stop), 1);
            i = stop;
        } else if (text[i] == '`') {
            std::size_t close = text.find('`', i + 1);
            std::size_t stop = close == std::string::npos ? text.size() : close + 1;
            std::fill(mask.begin() + static_cast<std::ptrdiff_t>(i),
                      mask.begin() + static_cast<std::ptrdiff_t>(stop), 1);
            i = stop;
        } else {
            ++i;
        }
    }
    return mask;
}

bool is_ws(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

} // namespace

std::vector<std::string> segment_sentences(const std::string& text) {
    const std::string body = trim(text);
    if (body.empty()) {
        throw ValidationError("cannot segment empty feedback text");
    }

    const std::vector<char> mask = code_span_mask(body);
    std::vector<std::string> sentences;
    std::size_t start = 0;

    for (std::size_t i = 0; i < body.size(); ++i) {
        if (mask[i]) continue;
        const char c = body[i];
        if (c != '.' && c != '!' && c != '?') continue;

        std::size_t j = i + 1;
        if (j >= body.size() || !is_ws(body[j])) continue;
        while (j < body.size() && is_ws(body[j])) ++j;
        if (j >= body.size()) break; // only trailing whitespace follows

        const char next = body[j];
        const bool next_starts_sentence =
            (next >= 'A' && next <= 'Z') || (next >= '0' && next <= '9');
        if (!next_starts_sentence) continue; // also keeps code spans attached

        if (c == '.') {
            std::size_t tok = i;
            while (tok > start && !is_ws(body[tok - 1])) --tok;
            if (abbreviations().count(to_lower(body.substr(tok, i + 1 - tok))) > 0) continue;
        }

        sentences.push_back(trim(body.substr(start, i + 1 - start)));
        start = j;
        i = j - 1;
    }
    sentences.push_back(trim(body.substr(start)));
    return sentences;
}

// ---------------------------------------------------------------------------
// Annotation validation
// ---------------------------------------------------------------------------

void validate(const PedagogyAnnotation& annotation) {
    if (annotation.labels.size() != dimension_info().size()) {
        throw ValidationError("pedagogy annotation for feedback '" + annotation.feedback_id +
                              "' must label exactly " + std::to_string(dimension_info().size()) +
                              " dimensions, got " + std::to_string(annotation.labels.size()));
    }
    for (const auto& dim : dimension_info()) {
        auto it = annotation.labels.find(std::string(dim.name));
        if (it == annotation.labels.end()) {
            throw ValidationError("pedagogy annotation for feedback '" + annotation.feedback_id +
                                  "' is missing dimension '" + std::string(dim.name) + "'");
        }
        if (it->second < 1 || it->second > 3) {
            throw ValidationError("pedagogy annotation for feedback '" + annotation.feedback_id +
                                  "': label " + std::to_string(it->second) + " for '" +
                                  std::string(dim.name) + "' is outside 1..3");
        }
    }
}

void validate(const EngagementAnnotation& annotation,
              std::optional<std::size_t> sentence_count) {
    const std::string where = "engagement annotation for feedback '" + annotation.feedback_id + "'";
    if (sentence_count && annotation.per_sentence.size() != *sentence_count) {
        throw ValidationError(where + " covers " + std::to_string(annotation.per_sentence.size()) +
                              " sentences, expected " + std::to_string(*sentence_count));
    }
    if (annotation.per_sentence.empty()) {
        throw ValidationError(where + " has no sentences");
    }
    for (std::size_t i = 0; i < annotation.per_sentence.size(); ++i) {
        const SentenceAttribution& s = annotation.per_sentence[i];
        if (s.sentence_index != static_cast<int>(i)) {
            throw ValidationError(where + ": entry " + std::to_string(i) +
                                  " has sentence_index " + std::to_string(s.sentence_index));
        }
        if (s.rel != 0 && s.rel != 1) {
            throw ValidationError(where + ": rel must be 0 or 1, got " + std::to_string(s.rel));
        }
        if (s.rel == 1) {
            if (!s.succ) {
                throw ValidationError(where + ": sentence " + std::to_string(i) +
                                      " has rel=1 but no succ bit");
            }
            if (*s.succ != 0 && *s.succ != 1) {
                throw ValidationError(where + ": succ must be 0 or 1, got " +
                                      std::to_string(*s.succ));
            }
            if (trim(s.rationale).empty()) {
                throw ValidationError(where + ": sentence " + std::to_string(i) +
                                      " has rel=1 but an empty rationale");
            }
        } else if (s.succ) {
            throw ValidationError(where + ": sentence " + std::to_string(i) +
                                  " has rel=0 but carries a succ bit");
        }
    }
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

std::string BackendIdentity::describe() const {
    return name + "/" + model + "@temperature=" + format_double(temperature);
}

FixtureBackend::FixtureBackend(const std::filesystem::path& transcript_path) {
    util::for_each_line(transcript_path, [&](std::string_view line, std::size_t line_no) {
        json record;
        try {
            record = json::parse(line);
        } catch (const json::exception& e) {
            throw ValidationError(transcript_path.string() + ":" + std::to_string(line_no) +
                                  ": invalid JSON: " + e.what());
        }
        if (!record.is_object() || !record.contains("key") || !record["key"].is_string()) {
            throw ValidationError(transcript_path.string() + ":" + std::to_string(line_no) +
                                  ": transcript record needs a string \"key\"");
        }
        const std::string key = record["key"].get<std::string>();
        std::vector<std::string> seq;
        if (record.contains("reply") && record["reply"].is_string()) {
            seq.push_back(record["reply"].get<std::string>());
        } else if (record.contains("replies") && record["replies"].is_array()) {
            for (const auto& r : record["replies"]) {
                if (!r.is_string()) {
                    throw ValidationError(transcript_path.string() + ":" +
                                          std::to_string(line_no) +
                                          ": \"replies\" must hold strings");
                }
                seq.push_back(r.get<std::string>());
            }
        }
        if (seq.empty()) {
            throw ValidationError(transcript_path.string() + ":" + std::to_string(line_no) +
                                  ": transcript record for '" + key +
                                  "' needs \"reply\" or a non-empty \"replies\"");
        }
        if (!replies_.emplace(key, std::move(seq)).second) {
            throw ValidationError(transcript_path.string() + ":" + std::to_string(line_no) +
                                  ": duplicate transcript key '" + key + "'");
        }
    });
}

FixtureBackend::FixtureBackend(std::map<std::string, std::vector<std::string>> replies)
    : replies_(std::move(replies)) {
    for (const auto& [key, seq] : replies_) {
        if (seq.empty()) {
            throw ValidationError("fixture reply sequence for '" + key + "' is empty");
        }
    }
}

const BackendIdentity& FixtureBackend::identity() const { return identity_; }

std::string FixtureBackend::complete(const JudgeRequest& request) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = replies_.find(request.item_key);
    if (it == replies_.end()) {
        throw BackendError("fixture backend has no scripted reply for item '" +
                           request.item_key + "'");
    }
    std::size_t& cursor = cursor_[request.item_key];
    const std::vector<std::string>& seq = it->second;
    const std::string& reply = seq[std::min(cursor, seq.size() - 1)];
    ++cursor;
    ++requests_;
    return reply;
}

std::size_t FixtureBackend::request_count() const { return requests_.load(); }

RemoteBackend::RemoteBackend(RemoteBackendConfig config) : config_(std::move(config)) {
    const std::string& url = config_.endpoint;
    const std::size_t scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("judge endpoint '" + url + "' is not an http URL");
    }
    const std::string scheme = url.substr(0, scheme_end);
    if (scheme == "https") {
        throw ConfigError("judge endpoint '" + url +
                          "' uses https, but this build has no TLS support; "
                          "use an http endpoint or a local gateway");
    }
    if (scheme != "http") {
        throw ConfigError("judge endpoint '" + url + "' has unsupported scheme '" + scheme + "'");
    }
    const std::size_t path_start = url.find('/', scheme_end + 3);
    scheme_host_ = path_start == std::string::npos ? url : url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
    if (config_.model.empty()) {
        throw ConfigError("judge backend needs a model name");
    }
    if (!config_.api_key_env.empty()) {
        if (const char* key = std::getenv(config_.api_key_env.c_str())) {
            api_key_ = key;
        }
    }
    identity_ = {"remote:" + scheme_host_ + path_, config_.model, config_.temperature};
}

const BackendIdentity& RemoteBackend::identity() const { return identity_; }

std::string RemoteBackend::complete(const JudgeRequest& request) {
    json body = {
        {"model", config_.model},
        {"temperature", config_.temperature},
        {"messages", json::array({json{{"role", "user"}, {"content", request.prompt}}})},
    };
    const std::string payload = body.dump();

    std::string last_error;
    int backoff_ms = config_.initial_backoff_ms;
    const int attempts = 1 + std::max(0, config_.max_retries);
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
            backoff_ms *= 2;
        }
        httplib::Client client(scheme_host_);
        client.set_connection_timeout(config_.timeout_seconds, 0);
        client.set_read_timeout(config_.timeout_seconds, 0);
        client.set_write_timeout(config_.timeout_seconds, 0);
        httplib::Headers headers;
        if (!api_key_.empty()) {
            headers.emplace("Authorization", "Bearer " + api_key_);
        }
        httplib::Result res = client.Post(path_, headers, payload, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        try {
            json reply = json::parse(res->body);
            const json& content = reply.at("choices").at(0).at("message").at("content");
            if (!content.is_string()) {
                last_error = "response content is not a string";
                continue;
            }
            return content.get<std::string>();
        } catch (const json::exception& e) {
            last_error = std::string("unexpected response shape: ") + e.what();
            continue;
        }
    }
    throw BackendError("judge request '" + request.item_key + "' to " + scheme_host_ + path_ +
                       " failed after " + std::to_string(attempts) + " attempts (" +
                       last_error + ")");
}

// ---------------------------------------------------------------------------
// Reply cache
// ---------------------------------------------------------------------------

ReplyCache::ReplyCache(std::filesystem::path directory) : directory_(std::move(directory)) {
    std::error_code ec;
    std::filesystem::create_directories(directory_, ec);
    if (ec) {
        throw ConfigError("cannot create reply cache directory '" + directory_.string() +
                          "': " + ec.message());
    }
}

std::optional<std::string> ReplyCache::lookup(const std::string& key) const {
    const std::filesystem::path path = directory_ / (key + ".json");
    std::error_code ec;
    if (!std::filesystem::exists(path, ec) || ec) return std::nullopt;
    try {
        json record = json::parse(read_file(path));
        if (record.is_object() && record.contains("reply") && record["reply"].is_string()) {
            return record["reply"].get<std::string>();
        }
    } catch (const std::exception&) {
        // A truncated or foreign file is treated as a miss and overwritten.
    }
    return std::nullopt;
}

void ReplyCache::store(const std::string& key,
                       const std::string& reply,
                       const std::string& backend_identity,
                       const std::string& item_key) {
    json record = {
        {"key", key},
        {"item_key", item_key},
        {"backend", backend_identity},
        {"reply", reply},
    };
    write_file_atomic(directory_ / (key + ".json"), record.dump() + "\n");
}

std::size_t ReplyCache::entry_count() const {
    std::size_t n = 0;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(directory_, ec)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") ++n;
    }
    return n;
}

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

namespace {

const char kPedagogyTemplate[] =
    R"(You are evaluating the feedback an AI programming tutor gave to a student.

Problem statement:
{problem}

Earlier attempts in this exercise (oldest first), with the feedback the student received:
{prior_context}

The student's submission that this feedback responds to:
{code}

The tutor's feedback, split into numbered sentences:
{feedback_sentences}

Rate the feedback on every dimension of the rubric below, judging only what the feedback itself says in the context above.

Rubric:
{rubric}

Reply with a single JSON object and nothing else, in exactly this form:
{"labels": {"mistake_identification": L, "mistake_location": L, "revealing_answer": L, "providing_guidance": L, "actionability": L, "coherence": L, "tutor_tone": L, "humanness": L}}
where each L is the integer label (1, 2 or 3) you chose for that dimension.
)";

const char kEngagementTemplate[] =
    R"(A student received tutor feedback on a failed code submission and then submitted a revision.

Code before the feedback:
{prev_code}

The tutor's feedback, split into numbered sentences:
{feedback_sentences}

Code after the feedback:
{next_code}

For each sentence, decide whether the student's edit shows that the sentence was used. Set "rel" to 1 if the edit engages with what the sentence says, and 0 otherwise. When rel is 1, also set "succ" to 1 if the student applied the sentence's point correctly and 0 if they applied it incorrectly, and write a short "rationale" pointing at the part of the edit that decided it. When rel is 0, omit "succ"; the rationale may be empty.

Reply with a single JSON object and nothing else, in exactly this form:
{"sentences": [{"index": 0, "rel": R, "succ": S, "rationale": "..."}, ...]}
with exactly one entry per numbered sentence, in order.
)";

const char kRepromptSuffix[] =
    "\n\nYour previous reply could not be parsed. Reply again with exactly the JSON object "
    "described above, with no surrounding prose and no code fences.";

std::string template_hash(const std::string& template_text) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(template_text)));
    return buf;
}

std::string numbered_sentences(const std::vector<std::string>& sentences) {
    std::string out;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        out += "[" + std::to_string(i) + "] " + sentences[i] + "\n";
    }
    if (!out.empty()) out.pop_back();
    return out;
}

std::string rendered_prior_context(const std::vector<PriorAttempt>& prior) {
    if (prior.empty()) return "(this is the student's first attempt)";
    std::string out;
    for (std::size_t i = 0; i < prior.size(); ++i) {
        out += "Attempt " + std::to_string(i) + " code:\n" + prior[i].code + "\n";
        out += "Feedback on attempt " + std::to_string(i) + ":\n";
        out += prior[i].feedback_text.empty() ? "(none)" : prior[i].feedback_text;
        out += "\n";
    }
    if (!out.empty()) out.pop_back();
    return out;
}

// Strips an optional markdown code fence (``` or ```json) around a reply.
std::string strip_reply_fence(const std::string& reply) {
    std::string body = trim(reply);
    if (!starts_with(body, "```")) return body;
    std::size_t open_end = body.find('\n');
    if (open_end == std::string::npos) return body;
    std::size_t close = body.rfind("```");
    if (close <= open_end) return body;
    return trim(body.substr(open_end + 1, close - open_end - 1));
}

json parse_reply_json(const std::string& reply, const std::string& what) {
    try {
        return json::parse(strip_reply_fence(reply));
    } catch (const json::exception& e) {
        throw AnnotationError(what + ": reply is not valid JSON: " + e.what());
    }
}

} // namespace

const std::string& default_pedagogy_template() {
    static const std::string t = kPedagogyTemplate;
    return t;
}

const std::string& default_engagement_template() {
    static const std::string t = kEngagementTemplate;
    return t;
}

std::string render_template(const std::string& template_text,
                            const std::map<std::string, std::string>& values) {
    std::string out = template_text;
    for (const auto& [name, value] : values) {
        out = replace_all(out, "{" + name + "}", value);
    }
    return out;
}

std::string render_rubric_text() {
    std::string out;
    for (const auto& dim : dimension_info()) {
        out += "- " + std::string(dim.name) + ": " + std::string(dim.question) + "\n";
        out += "  1 = " + std::string(dim.labels[0]) + "; 2 = " + std::string(dim.labels[1]) +
               "; 3 = " + std::string(dim.labels[2]) + ".\n";
    }
    if (!out.empty()) out.pop_back();
    return out;
}

std::string pedagogy_item_key(const std::string& feedback_id) {
    return "pedagogy:" + feedback_id;
}

std::string engagement_item_key(const std::string& feedback_id) {
    return "engagement:" + feedback_id;
}

// ---------------------------------------------------------------------------
// Reply parsing
// ---------------------------------------------------------------------------

PedagogyAnnotation parse_pedagogy_reply(const std::string& reply,
                                        const std::string& feedback_id) {
    const std::string what = "pedagogy reply for feedback '" + feedback_id + "'";
    json root = parse_reply_json(reply, what);
    if (!root.is_object()) {
        throw AnnotationError(what + ": expected a JSON object");
    }
    const json& labels = root.contains("labels") && root["labels"].is_object()
                             ? root["labels"]
                             : root;
    PedagogyAnnotation annotation;
    annotation.feedback_id = feedback_id;
    for (const auto& dim : dimension_info()) {
        const std::string name(dim.name);
        auto it = labels.find(name);
        if (it == labels.end() || !it->is_number_integer()) {
            throw AnnotationError(what + ": missing integer label for '" + name + "'");
        }
        const int label = it->get<int>();
        if (label < 1 || label > 3) {
            throw AnnotationError(what + ": label " + std::to_string(label) + " for '" + name +
                                  "' is outside 1..3");
        }
        annotation.labels[name] = label;
    }
    validate(annotation);
    return annotation;
}

EngagementParseResult parse_engagement_reply(const std::string& reply,
                                             const std::string& feedback_id,
                                             std::size_t sentence_count) {
    const std::string what = "engagement reply for feedback '" + feedback_id + "'";
    if (sentence_count == 0) {
        throw AnnotationError(what + ": sentence count is zero");
    }
    json root = parse_reply_json(reply, what);
    const json* array = nullptr;
    if (root.is_array()) {
        array = &root;
    } else if (root.is_object() && root.contains("sentences") && root["sentences"].is_array()) {
        array = &root["sentences"];
    } else {
        throw AnnotationError(what + ": expected a \"sentences\" array");
    }

    std::vector<std::optional<SentenceAttribution>> slots(sentence_count);
    std::vector<char> failed(sentence_count, 0);
    std::size_t stray_entries = 0;

    for (const json& entry : *array) {
        if (!entry.is_object() || !entry.contains("index") ||
            !entry["index"].is_number_integer()) {
            ++stray_entries;
            continue;
        }
        const int index = entry["index"].get<int>();
        if (index < 0 || index >= static_cast<int>(sentence_count)) {
            ++stray_entries;
            continue;
        }
        if (slots[static_cast<std::size_t>(index)]) {
            ++stray_entries; // duplicate index: first entry wins
            continue;
        }

        SentenceAttribution attribution;
        attribution.sentence_index = index;
        bool ok = entry.contains("rel") && entry["rel"].is_number_integer();
        if (ok) {
            attribution.rel = entry["rel"].get<int>();
            ok = attribution.rel == 0 || attribution.rel == 1;
        }
        if (ok && attribution.rel == 1) {
            ok = entry.contains("succ") && entry["succ"].is_number_integer();
            if (ok) {
                const int succ = entry["succ"].get<int>();
                ok = succ == 0 || succ == 1;
                if (ok) attribution.succ = succ;
            }
            if (ok) {
                ok = entry.contains("rationale") && entry["rationale"].is_string() &&
                     !trim(entry["rationale"].get<std::string>()).empty();
                if (ok) attribution.rationale = entry["rationale"].get<std::string>();
            }
        } else if (ok) {
            // rel = 0: succ is dropped even if sent; rationale is optional.
            if (entry.contains("rationale") && entry["rationale"].is_string()) {
                attribution.rationale = entry["rationale"].get<std::string>();
            }
        }

        if (ok) {
            slots[static_cast<std::size_t>(index)] = attribution;
        } else {
            failed[static_cast<std::size_t>(index)] = 1;
            slots[static_cast<std::size_t>(index)] =
                SentenceAttribution{index, 0, std::nullopt, "judge-parse-failure"};
        }
    }

    EngagementParseResult result;
    result.annotation.feedback_id = feedback_id;
    result.sentence_parse_failures = stray_entries;
    for (std::size_t i = 0; i < sentence_count; ++i) {
        if (!slots[i]) {
            failed[i] = 1;
            slots[i] = SentenceAttribution{static_cast<int>(i), 0, std::nullopt,
                                           "judge-parse-failure"};
        }
        if (failed[i]) ++result.sentence_parse_failures;
        result.annotation.per_sentence.push_back(*slots[i]);
    }
    validate(result.annotation, sentence_count);
    return result;
}

// ---------------------------------------------------------------------------
// Annotator
// ---------------------------------------------------------------------------

Annotator::Annotator(JudgeBackend& backend, AnnotatorConfig config)
    : backend_(backend), config_(std::move(config)) {
    if (config_.pedagogy_template.empty()) {
        config_.pedagogy_template = default_pedagogy_template();
    }
    if (config_.engagement_template.empty()) {
        config_.engagement_template = default_engagement_template();
    }
    if (config_.cache_dir) {
        cache_.emplace(*config_.cache_dir);
    }
}

std::string Annotator::complete_cached(const std::string& item_key,
                                       const std::string& template_text,
                                       const std::string& prompt) {
    const std::string key = content_key(backend_.identity().describe() + "\x1f" +
                                        template_hash(template_text) + "\x1f" + prompt);
    if (cache_) {
        if (auto hit = cache_->lookup(key)) {
            ++cache_hits_;
            return *hit;
        }
        ++cache_misses_;
    }
    std::string reply = backend_.complete({item_key, prompt});
    ++backend_requests_;
    if (cache_) {
        cache_->store(key, reply, backend_.identity().describe(), item_key);
    }
    return reply;
}

PedagogyAnnotation Annotator::annotate_pedagogy(const std::string& problem_statement,
                                                const std::vector<PriorAttempt>& prior_context,
                                                const std::string& code,
                                                const corpus::FeedbackMessage& feedback) {
    if (feedback.sentences.empty()) {
        throw ValidationError("feedback '" + feedback.feedback_id +
                              "' has no sentences; segment it before annotating");
    }
    const std::string prompt = render_template(
        config_.pedagogy_template,
        {
            {"problem", problem_statement},
            {"prior_context", rendered_prior_context(prior_context)},
            {"code", code},
            {"feedback_sentences", numbered_sentences(feedback.sentences)},
            {"rubric", render_rubric_text()},
        });
    const std::string item_key = pedagogy_item_key(feedback.feedback_id);
    const std::string reply = complete_cached(item_key, config_.pedagogy_template, prompt);
    try {
        return parse_pedagogy_reply(reply, feedback.feedback_id);
    } catch (const AnnotationError&) {
        ++reprompts_;
    }
    const std::string retry_reply =
        complete_cached(item_key, config_.pedagogy_template, prompt + kRepromptSuffix);
    try {
        return parse_pedagogy_reply(retry_reply, feedback.feedback_id);
    } catch (const AnnotationError& e) {
        throw AnnotationError("pedagogy annotation for feedback '" + feedback.feedback_id +
                              "' failed after one reprompt: " + e.what());
    }
}

EngagementAnnotation Annotator::annotate_engagement(const std::string& prev_code,
                                                    const corpus::FeedbackMessage& feedback,
                                                    const std::string& next_code) {
    if (feedback.sentences.empty()) {
        throw ValidationError("feedback '" + feedback.feedback_id +
                              "' has no sentences; segment it before annotating");
    }
    const std::string prompt = render_template(
        config_.engagement_template,
        {
            {"prev_code", prev_code},
            {"feedback_sentences", numbered_sentences(feedback.sentences)},
            {"next_code", next_code},
        });
    const std::string item_key = engagement_item_key(feedback.feedback_id);
    const std::size_t n_sentences = feedback.sentences.size();

    const std::string reply = complete_cached(item_key, config_.engagement_template, prompt);
    try {
        EngagementParseResult parsed =
            parse_engagement_reply(reply, feedback.feedback_id, n_sentences);
        sentence_parse_failures_ += parsed.sentence_parse_failures;
        return parsed.annotation;
    } catch (const AnnotationError&) {
        ++reprompts_;
    }
    const std::string retry_reply =
        complete_cached(item_key, config_.engagement_template, prompt + kRepromptSuffix);
    try {
        EngagementParseResult parsed =
            parse_engagement_reply(retry_reply, feedback.feedback_id, n_sentences);
        sentence_parse_failures_ += parsed.sentence_parse_failures;
        return parsed.annotation;
    } catch (const AnnotationError& e) {
        throw AnnotationError("engagement annotation for feedback '" + feedback.feedback_id +
                              "' failed after one reprompt: " + e.what());
    }
}

AnnotatorStats Annotator::stats() const {
    AnnotatorStats s;
    s.cache_hits = cache_hits_.load();
    s.cache_misses = cache_misses_.load();
    s.backend_requests = backend_requests_.load();
    s.reprompts = reprompts_.load();
    s.sentence_parse_failures = sentence_parse_failures_.load();
    return s;
}

// ---------------------------------------------------------------------------
// Annotation files + agreement
// ---------------------------------------------------------------------------

void write_pedagogy_annotations(const std::filesystem::path& path,
                                const std::vector<PedagogyAnnotation>& annotations) {
    std::string out;
    for (const PedagogyAnnotation& a : annotations) {
        validate(a);
        json record = {{"feedback_id", a.feedback_id}, {"labels", a.labels}};
        out += record.dump() + "\n";
    }
    write_file_atomic(path, out);
}

std::vector<PedagogyAnnotation> load_pedagogy_annotations(const std::filesystem::path& path) {
    std::vector<PedagogyAnnotation> annotations;
    util::for_each_line(path, [&](std::string_view line, std::size_t line_no) {
        const std::string where = path.string() + ":" + std::to_string(line_no);
        json record;
        try {
            record = json::parse(line);
        } catch (const json::exception& e) {
            throw ValidationError(where + ": invalid JSON: " + e.what());
        }
        if (!record.is_object() || !record.contains("feedback_id") ||
            !record["feedback_id"].is_string() || !record.contains("labels") ||
            !record["labels"].is_object()) {
            throw ValidationError(where + ": expected {\"feedback_id\", \"labels\"}");
        }
        PedagogyAnnotation a;
        a.feedback_id = record["feedback_id"].get<std::string>();
        for (const auto& [name, value] : record["labels"].items()) {
            if (!is_dimension_name(name) || !value.is_number_integer()) {
                throw ValidationError(where + ": bad label entry '" + name + "'");
            }
            a.labels[name] = value.get<int>();
        }
        try {
            validate(a);
        } catch (const ValidationError& e) {
            throw ValidationError(where + ": " + e.what());
        }
        annotations.push_back(std::move(a));
    });
    return annotations;
}

void write_engagement_annotations(const std::filesystem::path& path,
                                  const std::vector<EngagementAnnotation>& annotations) {
    std::string out;
    for (const EngagementAnnotation& a : annotations) {
        validate(a);
        json sentences = json::array();
        for (const SentenceAttribution& s : a.per_sentence) {
            json entry = {{"sentence_index", s.sentence_index},
                          {"rel", s.rel},
                          {"rationale", s.rationale}};
            if (s.succ) entry["succ"] = *s.succ;
            sentences.push_back(std::move(entry));
        }
        json record = {{"feedback_id", a.feedback_id}, {"per_sentence", sentences}};
        out += record.dump() + "\n";
    }
    write_file_atomic(path, out);
}

std::vector<EngagementAnnotation> load_engagement_annotations(const std::filesystem::path& path) {
    std::vector<EngagementAnnotation> annotations;
    util::for_each_line(path, [&](std::string_view line, std::size_t line_no) {
        const std::string where = path.string() + ":" + std::to_string(line_no);
        json record;
        try {
            record = json::parse(line);
        } catch (const json::exception& e) {
            throw ValidationError(where + ": invalid JSON: " + e.what());
        }
        if (!record.is_object() || !record.contains("feedback_id") ||
            !record["feedback_id"].is_string() || !record.contains("per_sentence") ||
            !record["per_sentence"].is_array()) {
            throw ValidationError(where + ": expected {\"feedback_id\", \"per_sentence\"}");
        }
        EngagementAnnotation a;
        a.feedback_id = record["feedback_id"].get<std::string>();
        for (const json& entry : record["per_sentence"]) {
            if (!entry.is_object() || !entry.contains("sentence_index") ||
                !entry["sentence_index"].is_number_integer() || !entry.contains("rel") ||
                !entry["rel"].is_number_integer()) {
                throw ValidationError(where + ": bad per_sentence entry");
            }
            SentenceAttribution s;
            s.sentence_index = entry["sentence_index"].get<int>();
            s.rel = entry["rel"].get<int>();
            if (entry.contains("succ")) {
                if (!entry["succ"].is_number_integer()) {
                    throw ValidationError(where + ": succ must be an integer bit");
                }
                s.succ = entry["succ"].get<int>();
            }
            if (entry.contains("rationale")) {
                if (!entry["rationale"].is_string()) {
                    throw ValidationError(where + ": rationale must be a string");
                }
                s.rationale = entry["rationale"].get<std::string>();
            }
            a.per_sentence.push_back(std::move(s));
        }
        try {
            validate(a, std::nullopt);
        } catch (const ValidationError& e) {
            throw ValidationError(where + ": " + e.what());
        }
        annotations.push_back(std::move(a));
    });
    return annotations;
}

namespace {

enum class AnnotationKind { pedagogy, engagement };

// item id -> (dimension -> label); "rel"/"succ" are the engagement dimensions.
using LabelTable = std::map<std::string, std::map<std::string, int>>;

std::pair<AnnotationKind, LabelTable> load_label_table(const std::filesystem::path& path) {
    const std::string first = [&] {
        std::string line;
        util::for_each_line(path, [&](std::string_view l, std::size_t) {
            if (line.empty()) line = std::string(l);
        });
        return line;
    }();
    if (first.empty()) {
        throw ValidationError("annotation file '" + path.string() + "' is empty");
    }
    json probe;
    try {
        probe = json::parse(first);
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ":1: invalid JSON: " + std::string(e.what()));
    }
    LabelTable table;
    if (probe.is_object() && probe.contains("labels")) {
        for (const PedagogyAnnotation& a : load_pedagogy_annotations(path)) {
            auto& row = table[a.feedback_id];
            for (const auto& [dim, label] : a.labels) row[dim] = label;
        }
        return {AnnotationKind::pedagogy, std::move(table)};
    }
    if (probe.is_object() && probe.contains("per_sentence")) {
        for (const EngagementAnnotation& a : load_engagement_annotations(path)) {
            for (const SentenceAttribution& s : a.per_sentence) {
                auto& row = table[a.feedback_id + "#" + std::to_string(s.sentence_index)];
                row["rel"] = s.rel;
                if (s.succ) row["succ"] = *s.succ;
            }
        }
        return {AnnotationKind::engagement, std::move(table)};
    }
    throw ValidationError("annotation file '" + path.string() +
                          "' is neither pedagogy nor engagement annotations");
}

} // namespace

AgreementReport agreement_report(const std::filesystem::path& annotations_a,
                                 const std::filesystem::path& annotations_b) {
    auto [kind_a, table_a] = load_label_table(annotations_a);
    auto [kind_b, table_b] = load_label_table(annotations_b);
    if (kind_a != kind_b) {
        throw ValidationError("cannot compare pedagogy annotations against engagement annotations");
    }

    std::vector<std::string> shared;
    for (const auto& [id, labels] : table_a) {
        if (table_b.count(id)) shared.push_back(id);
    }
    AgreementReport report;
    report.shared_items = shared.size();
    if (shared.empty()) {
        throw ValidationError("annotation files share no item ids");
    }
    if (shared.size() != table_a.size() || shared.size() != table_b.size()) {
        report.warnings.push_back(
            "item ids overlap only partially: " + std::to_string(shared.size()) + " shared, " +
            std::to_string(table_a.size() - shared.size()) + " only in '" +
            annotations_a.string() + "', " + std::to_string(table_b.size() - shared.size()) +
            " only in '" + annotations_b.string() + "'");
    }

    std::vector<std::string> dims;
    if (kind_a == AnnotationKind::pedagogy) {
        for (const auto& d : dimension_names()) dims.emplace_back(d);
    } else {
        dims = {"rel", "succ"};
    }

    double kappa_sum = 0.0;
    for (const std::string& dim : dims) {
        std::vector<int> a_labels;
        std::vector<int> b_labels;
        for (const std::string& id : shared) {
            auto a_it = table_a[id].find(dim);
            auto b_it = table_b[id].find(dim);
            if (a_it == table_a[id].end() || b_it == table_b[id].end()) continue;
            a_labels.push_back(a_it->second);
            b_labels.push_back(b_it->second);
        }
        if (a_labels.empty()) {
            report.warnings.push_back("no overlapping items carry dimension '" + dim + "'");
            continue;
        }
        stats::KappaResult kr = stats::cohens_kappa(a_labels, b_labels);
        if (kr.constant_rater) {
            report.warnings.push_back("undefined-variance for dimension '" + dim +
                                      "': at least one annotator is constant");
        }
        report.dimensions.push_back(
            {dim, kr.kappa, kr.percent_agreement, kr.constant_rater, a_labels.size()});
        kappa_sum += kr.kappa;
    }
    if (!report.dimensions.empty()) {
        report.macro_kappa = kappa_sum / static_cast<double>(report.dimensions.size());
    }
    return report;
}

} // namespace tutoreval::judge
