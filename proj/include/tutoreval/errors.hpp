#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace tutoreval {

/// Input data failed validation (bad record, broken reference, bad range).
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Configuration file or CLI arguments are invalid.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Judge backend transport failure that persisted through retries.
class BackendError : public std::runtime_error {
public:
    explicit BackendError(const std::string& what) : std::runtime_error(what) {}
};

/// Judge reply could not be parsed even after one reprompt.
class AnnotationError : public std::runtime_error {
public:
    explicit AnnotationError(const std::string& what) : std::runtime_error(what) {}
};

/// Pipeline invoked out of order (e.g. evaluate before annotate) or its
/// on-disk state is inconsistent with the corpus.
class StateError : public std::runtime_error {
public:
    explicit StateError(const std::string& what) : std::runtime_error(what) {}
};

/// Statistical routine received degenerate or malformed input.
class StatError : public std::runtime_error {
public:
    explicit StatError(const std::string& what) : std::runtime_error(what) {}
};

/// Logistic fit diverged: a covariate (quasi-)perfectly predicts the outcome.
class SeparationError : public StatError {
public:
    SeparationError(const std::string& what, std::vector<std::string> covariates)
        : StatError(what), covariates_(std::move(covariates)) {}
    const std::vector<std::string>& covariates() const { return covariates_; }

private:
    std::vector<std::string> covariates_;
};

/// Information matrix singular even after the one-shot ridge fallback.
class RankDeficiencyError : public StatError {
public:
    explicit RankDeficiencyError(const std::string& what) : StatError(what) {}
};

} // namespace tutoreval
