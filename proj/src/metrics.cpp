#include "tutoreval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "tutoreval/csv.hpp"
#include "tutoreval/errors.hpp"
#include "tutoreval/util.hpp"

namespace tutoreval::metrics {

using util::format_fixed;

// ---------------------------------------------------------------------------
// DesiredLabelRubric
// ---------------------------------------------------------------------------

DesiredLabelRubric DesiredLabelRubric::defaults() {
    DesiredLabelRubric rubric;
    for (const auto& dim : dimension_info()) {
        rubric.desired_[std::string(dim.name)] = {1};
    }
    rubric.desired_["revealing_answer"] = {3};
    rubric.desired_["tutor_tone"] = {1, 2};
    return rubric;
}

const std::set<int>& DesiredLabelRubric::desired(const std::string& dimension) const {
    auto it = desired_.find(dimension);
    if (it == desired_.end()) {
        throw ValidationError("unknown rubric dimension '" + dimension + "'");
    }
    return it->second;
}

void DesiredLabelRubric::set_desired(const std::string& dimension, std::set<int> labels) {
    if (!is_dimension_name(dimension)) {
        throw ValidationError("unknown rubric dimension '" + dimension + "'");
    }
    if (labels.empty()) {
        throw ValidationError("desired label set for '" + dimension + "' cannot be empty");
    }
    for (int label : labels) {
        if (label < 1 || label > 3) {
            throw ValidationError("desired label " + std::to_string(label) + " for '" +
                                  dimension + "' is outside 1..3");
        }
    }
    desired_[dimension] = std::move(labels);
}

bool DesiredLabelRubric::matches(const std::string& dimension, int label) const {
    return desired(dimension).count(label) > 0;
}

// ---------------------------------------------------------------------------
// Core metrics
// ---------------------------------------------------------------------------

DamrResult damr(const std::vector<judge::PedagogyAnnotation>& annotations,
                const std::string& dimension,
                const DesiredLabelRubric& rubric) {
    if (annotations.empty()) {
        throw ValidationError("no annotations to compute DAMR for dimension '" + dimension + "'");
    }
    const std::set<int>& desired = rubric.desired(dimension);
    DamrResult result;
    result.total = annotations.size();
    for (const judge::PedagogyAnnotation& a : annotations) {
        auto it = a.labels.find(dimension);
        if (it == a.labels.end()) {
            throw ValidationError("annotation for feedback '" + a.feedback_id +
                                  "' lacks dimension '" + dimension + "'");
        }
        if (desired.count(it->second) > 0) ++result.matched;
    }
    result.rate = static_cast<double>(result.matched) / static_cast<double>(result.total);
    return result;
}

double rel_score(const judge::EngagementAnnotation& annotation) {
    validate(annotation);
    std::size_t rel_sum = 0;
    for (const judge::SentenceAttribution& s : annotation.per_sentence) rel_sum += s.rel;
    return static_cast<double>(rel_sum) / static_cast<double>(annotation.per_sentence.size());
}

std::optional<double> succ_score(const judge::EngagementAnnotation& annotation) {
    validate(annotation);
    std::size_t rel_sum = 0;
    std::size_t succ_sum = 0;
    for (const judge::SentenceAttribution& s : annotation.per_sentence) {
        rel_sum += s.rel;
        if (s.succ) succ_sum += *s.succ;
    }
    if (rel_sum == 0) return std::nullopt;
    return static_cast<double>(succ_sum) / static_cast<double>(rel_sum);
}

EngagementScores engagement_scores(const judge::EngagementAnnotation& annotation) {
    return {annotation.feedback_id, rel_score(annotation), succ_score(annotation)};
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

namespace {

struct Moments {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double sd = std::numeric_limits<double>::quiet_NaN();
};

Moments moments(const std::vector<double>& values) {
    Moments m;
    if (values.empty()) return m;
    double sum = 0.0;
    for (double v : values) sum += v;
    m.mean = sum / static_cast<double>(values.size());
    if (values.size() < 2) {
        m.sd = 0.0;
        return m;
    }
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    return m;
}

} // namespace

std::vector<GroupSummary> aggregate_engagement(const std::vector<EngagementScoreRow>& rows) {
    // (tutor, assignment) -> rel values, present succ values, absent-succ count
    struct Bucket {
        std::vector<double> rel;
        std::vector<double> succ;
        std::size_t succ_absent = 0;
    };
    std::map<std::pair<std::string, std::string>, Bucket> buckets;
    for (const EngagementScoreRow& row : rows) {
        Bucket& bucket = buckets[{row.tutor_id, row.assignment_id}];
        bucket.rel.push_back(row.scores.rel_score);
        if (row.scores.succ_score) {
            bucket.succ.push_back(*row.scores.succ_score);
        } else {
            ++bucket.succ_absent;
        }
    }

    std::vector<GroupSummary> out;
    for (const auto& [key, bucket] : buckets) {
        const Moments rel = moments(bucket.rel);
        out.push_back({key.first, key.second, "rel_score", rel.mean, rel.sd,
                       bucket.rel.size(), 0});
        const Moments succ = moments(bucket.succ);
        out.push_back({key.first, key.second, "succ_score", succ.mean, succ.sd,
                       bucket.succ.size(), bucket.succ_absent});
    }
    return out;
}

std::vector<GroupSummary> aggregate_pedagogy(const std::vector<PedagogyRow>& rows,
                                             const DesiredLabelRubric& rubric) {
    std::map<std::string, std::vector<judge::PedagogyAnnotation>> by_tutor;
    for (const PedagogyRow& row : rows) {
        by_tutor[row.tutor_id].push_back(row.annotation);
    }
    std::vector<GroupSummary> out;
    for (const auto& [tutor, annotations] : by_tutor) {
        for (const auto& dim : dimension_info()) {
            const std::string name(dim.name);
            std::vector<double> indicator;
            indicator.reserve(annotations.size());
            for (const judge::PedagogyAnnotation& a : annotations) {
                indicator.push_back(rubric.matches(name, a.labels.at(name)) ? 1.0 : 0.0);
            }
            const Moments m = moments(indicator);
            out.push_back({tutor, name, "damr", m.mean, m.sd, indicator.size(), 0});
        }
    }
    return out;
}

namespace {

std::vector<DamrCell> damr_cells(const std::vector<PedagogyRow>& rows,
                                 const DesiredLabelRubric& rubric,
                                 bool by_assignment) {
    std::map<std::pair<std::string, std::string>, std::vector<judge::PedagogyAnnotation>> groups;
    for (const PedagogyRow& row : rows) {
        const std::string group = by_assignment ? row.assignment_id : std::string("overall");
        groups[{row.tutor_id, group}].push_back(row.annotation);
    }
    std::vector<DamrCell> cells;
    for (const auto& [key, annotations] : groups) {
        for (const auto& dim : dimension_info()) {
            const std::string name(dim.name);
            cells.push_back({key.first, key.second, name, damr(annotations, name, rubric)});
        }
    }
    return cells;
}

} // namespace

std::vector<DamrCell> damr_by_dimension(const std::vector<PedagogyRow>& rows,
                                        const DesiredLabelRubric& rubric) {
    return damr_cells(rows, rubric, false);
}

std::vector<DamrCell> damr_by_assignment(const std::vector<PedagogyRow>& rows,
                                         const DesiredLabelRubric& rubric) {
    return damr_cells(rows, rubric, true);
}

std::vector<DamrDelta> damr_delta(const std::vector<DamrCell>& tutor_a,
                                  const std::vector<DamrCell>& tutor_b) {
    using CellKey = std::pair<std::string, std::string>; // (assignment, dimension)
    std::map<CellKey, double> rates_a;
    std::map<CellKey, double> rates_b;
    for (const DamrCell& c : tutor_a) rates_a[{c.assignment_id, c.dimension}] = c.result.rate;
    for (const DamrCell& c : tutor_b) rates_b[{c.assignment_id, c.dimension}] = c.result.rate;

    std::vector<std::string> missing;
    for (const auto& [key, rate] : rates_a) {
        if (!rates_b.count(key)) {
            missing.push_back(key.first + "/" + key.second + " (second tutor)");
        }
    }
    for (const auto& [key, rate] : rates_b) {
        if (!rates_a.count(key)) {
            missing.push_back(key.first + "/" + key.second + " (first tutor)");
        }
    }
    if (!missing.empty()) {
        std::sort(missing.begin(), missing.end());
        std::string joined;
        for (const std::string& m : missing) joined += (joined.empty() ? "" : ", ") + m;
        throw ValidationError("DAMR tables do not cover the same cells; missing: " + joined);
    }

    // Sorted by assignment, then by canonical dimension order.
    std::map<std::string, int> dim_order;
    {
        int order = 0;
        for (const auto& d : dimension_names()) dim_order[std::string(d)] = order++;
    }
    std::vector<DamrDelta> deltas;
    for (const auto& [key, rate_a] : rates_a) {
        deltas.push_back({key.first, key.second, (rates_b[key] - rate_a) * 100.0});
    }
    std::sort(deltas.begin(), deltas.end(), [&](const DamrDelta& x, const DamrDelta& y) {
        return std::tie(x.assignment_id, dim_order[x.dimension]) <
               std::tie(y.assignment_id, dim_order[y.dimension]);
    });
    return deltas;
}

std::string metric_table_csv(const std::vector<GroupSummary>& rows) {
    csv::Writer writer;
    writer.row({"tutor", "group", "metric", "mean", "sd", "n", "n_excluded"});
    for (const GroupSummary& row : rows) {
        const bool empty = row.n == 0;
        writer.row({
            row.tutor_id,
            row.group,
            row.metric,
            empty ? "" : format_fixed(row.mean * 100.0, 2),
            empty ? "" : format_fixed(row.sd * 100.0, 2),
            std::to_string(row.n),
            std::to_string(row.n_excluded),
        });
    }
    return writer.str();
}

} // namespace tutoreval::metrics
