#include "tutoreval/distributions.hpp"

#include <map>

#include "tutoreval/csv.hpp"
#include "tutoreval/dimensions.hpp"
#include "tutoreval/errors.hpp"
#include "tutoreval/util.hpp"

namespace tutoreval::distributions {

std::string metric_name(EngagementMetric metric) {
    return metric == EngagementMetric::rel ? "rel_score" : "succ_score";
}

std::vector<DesirednessSplit> split_by_desiredness(
    const std::vector<metrics::PedagogyRow>& pedagogy,
    const std::vector<metrics::EngagementScores>& engagement,
    const metrics::DesiredLabelRubric& rubric,
    EngagementMetric metric) {
    std::map<std::string, const metrics::EngagementScores*> engagement_by_id;
    for (const metrics::EngagementScores& s : engagement) {
        if (!engagement_by_id.emplace(s.feedback_id, &s).second) {
            throw ValidationError("duplicate engagement scores for feedback '" +
                                  s.feedback_id + "'");
        }
    }

    // (tutor, dimension) -> split, keyed deterministically.
    std::map<std::pair<std::string, std::string>, DesirednessSplit> splits;
    std::map<std::string, bool> seen_feedback; // enforce disjointness per feedback
    for (const metrics::PedagogyRow& row : pedagogy) {
        if (seen_feedback.count(row.annotation.feedback_id)) {
            throw ValidationError("duplicate pedagogy annotation for feedback '" +
                                  row.annotation.feedback_id + "'");
        }
        seen_feedback[row.annotation.feedback_id] = true;

        auto eng_it = engagement_by_id.find(row.annotation.feedback_id);
        if (eng_it == engagement_by_id.end()) continue;
        const metrics::EngagementScores& scores = *eng_it->second;

        for (const auto& dim_name : dimension_names()) {
            const std::string dimension(dim_name);
            auto key = std::make_pair(row.tutor_id, dimension);
            auto [it, inserted] = splits.try_emplace(key);
            DesirednessSplit& split = it->second;
            if (inserted) {
                split.tutor_id = row.tutor_id;
                split.dimension = dimension;
                split.metric = metric;
            }

            double value = 0.0;
            if (metric == EngagementMetric::rel) {
                value = scores.rel_score;
            } else if (scores.succ_score) {
                value = *scores.succ_score;
            } else {
                ++split.n_absent;
                continue;
            }
            const bool desired =
                rubric.matches(dimension, row.annotation.labels.at(dimension));
            (desired ? split.desired : split.undesired).push_back(value);
        }
    }

    std::vector<DesirednessSplit> out;
    out.reserve(splits.size());
    for (auto& [key, split] : splits) out.push_back(std::move(split));
    return out;
}

SplitComparison compare_splits(const std::vector<DesirednessSplit>& splits,
                               std::size_t min_undesired_n) {
    SplitComparison comparison;
    // family id -> indices into comparison.results
    std::map<std::string, std::vector<std::size_t>> families;

    for (const DesirednessSplit& split : splits) {
        const std::string metric = metric_name(split.metric);
        if (split.undesired.size() < min_undesired_n) {
            comparison.excluded.push_back({split.tutor_id, split.dimension, metric,
                                           "undesired n=" + std::to_string(split.undesired.size()) +
                                               " < " + std::to_string(min_undesired_n),
                                           split.desired.size(), split.undesired.size()});
            continue;
        }
        if (split.desired.empty()) {
            comparison.excluded.push_back({split.tutor_id, split.dimension, metric,
                                           "desired arm is empty", 0, split.undesired.size()});
            continue;
        }
        stats::MannWhitneyResult mwu = stats::mann_whitney_u(split.desired, split.undesired);
        stats::StatResult result;
        result.test_name = "mann_whitney_u";
        result.group = split.tutor_id + "/" + split.dimension;
        result.statistic = mwu.u;
        result.p_raw = mwu.p_value;
        result.p_holm = mwu.p_value; // adjusted below
        result.family_id = split.tutor_id + ":" + metric;
        result.n_a = split.desired.size();
        result.n_b = split.undesired.size();
        families[result.family_id].push_back(comparison.results.size());
        comparison.results.push_back(std::move(result));
    }

    for (const auto& [family, indices] : families) {
        std::vector<double> p_raw;
        p_raw.reserve(indices.size());
        for (std::size_t idx : indices) p_raw.push_back(comparison.results[idx].p_raw);
        const std::vector<double> adjusted = stats::holm_adjust(p_raw);
        for (std::size_t k = 0; k < indices.size(); ++k) {
            comparison.results[indices[k]].p_holm = adjusted[k];
        }
    }
    return comparison;
}

namespace {

void summary_rows(csv::Writer& writer,
                  const DesirednessSplit& split,
                  const std::string& group,
                  const std::vector<double>& values) {
    if (values.empty()) {
        writer.row({split.tutor_id, split.dimension, metric_name(split.metric), group, "0", "",
                    "", "", ""});
        return;
    }
    double sum = 0.0;
    for (double v : values) sum += v;
    writer.row({
        split.tutor_id,
        split.dimension,
        metric_name(split.metric),
        group,
        std::to_string(values.size()),
        util::format_fixed(sum / static_cast<double>(values.size()), 4),
        util::format_fixed(stats::quantile(values, 0.25), 4),
        util::format_fixed(stats::quantile(values, 0.5), 4),
        util::format_fixed(stats::quantile(values, 0.75), 4),
    });
}

} // namespace

std::string split_summary_csv(const std::vector<DesirednessSplit>& splits) {
    csv::Writer writer;
    writer.row({"tutor", "dimension", "metric", "group", "n", "mean", "q1", "median", "q3"});
    for (const DesirednessSplit& split : splits) {
        summary_rows(writer, split, "desired", split.desired);
        summary_rows(writer, split, "undesired", split.undesired);
    }
    return writer.str();
}

std::string split_scores_csv(const std::vector<DesirednessSplit>& splits) {
    csv::Writer writer;
    writer.row({"tutor", "dimension", "metric", "group", "score"});
    for (const DesirednessSplit& split : splits) {
        for (double v : split.desired) {
            writer.row({split.tutor_id, split.dimension, metric_name(split.metric), "desired",
                        util::format_double(v)});
        }
        for (double v : split.undesired) {
            writer.row({split.tutor_id, split.dimension, metric_name(split.metric), "undesired",
                        util::format_double(v)});
        }
    }
    return writer.str();
}

} // namespace tutoreval::distributions
