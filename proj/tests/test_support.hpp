#pragma once

// Shared plumbing for the test binaries: a self-cleaning temp directory and a
// couple of one-line helpers for building corpus objects inline.

#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>

#include "tutoreval/corpus.hpp"
#include "tutoreval/judge.hpp"
#include "tutoreval/util.hpp"

namespace test_support {

class TempDir {
public:
    explicit TempDir(const std::string& label) {
        const auto base = std::filesystem::temp_directory_path();
        std::mt19937_64 rng(std::random_device{}());
        for (int attempt = 0; attempt < 64; ++attempt) {
            auto candidate = base / (label + "-" + std::to_string(rng()));
            std::error_code ec;
            if (std::filesystem::create_directory(candidate, ec)) {
                path_ = std::move(candidate);
                return;
            }
        }
        throw std::runtime_error("could not create a temp directory for " + label);
    }

    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }

    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    std::filesystem::path path_;
};

inline tutoreval::corpus::FeedbackMessage make_feedback(const std::string& feedback_id,
                                                        const std::string& submission_id,
                                                        const std::string& text) {
    tutoreval::corpus::FeedbackMessage fb;
    fb.feedback_id = feedback_id;
    fb.submission_id = submission_id;
    fb.text = text;
    fb.sentences = tutoreval::judge::segment_sentences(text);
    return fb;
}

inline std::string slurp(const std::filesystem::path& path) {
    return tutoreval::util::read_file(path);
}

} // namespace test_support
