#include "tutoreval/perception.hpp"

#include <algorithm>
#include <map>

#include "tutoreval/csv.hpp"
#include "tutoreval/dimensions.hpp"
#include "tutoreval/errors.hpp"
#include "tutoreval/util.hpp"

namespace tutoreval::perception {

int binarize_rating(int likert, int threshold) {
    if (likert < 1 || likert > 5) {
        throw ValidationError("likert rating " + std::to_string(likert) + " is outside 1..5");
    }
    return likert >= threshold ? 1 : 0;
}

RowBuildResult build_rows(const corpus::Corpus& c,
                          const std::vector<judge::PedagogyAnnotation>& pedagogy,
                          const std::vector<metrics::EngagementScores>& engagement,
                          const std::string& baseline_tutor_id,
                          const metrics::DesiredLabelRubric& rubric,
                          int likert_threshold) {
    const std::vector<std::string> tutors = c.tutor_ids();
    if (std::find(tutors.begin(), tutors.end(), baseline_tutor_id) == tutors.end()) {
        std::string known;
        for (const std::string& t : tutors) known += (known.empty() ? "" : ", ") + t;
        throw ValidationError("baseline tutor '" + baseline_tutor_id +
                              "' does not appear in the corpus (tutors: " + known + ")");
    }

    std::map<std::string, const judge::PedagogyAnnotation*> pedagogy_by_id;
    for (const judge::PedagogyAnnotation& a : pedagogy) {
        if (!pedagogy_by_id.emplace(a.feedback_id, &a).second) {
            throw ValidationError("duplicate pedagogy annotation for feedback '" +
                                  a.feedback_id + "'");
        }
    }
    std::map<std::string, const metrics::EngagementScores*> engagement_by_id;
    for (const metrics::EngagementScores& s : engagement) {
        if (!engagement_by_id.emplace(s.feedback_id, &s).second) {
            throw ValidationError("duplicate engagement scores for feedback '" +
                                  s.feedback_id + "'");
        }
    }

    RowBuildResult result;
    for (const auto& [submission_id, rating] : c.ratings_by_submission) {
        auto fb_it = c.feedback_by_submission.find(submission_id);
        if (fb_it == c.feedback_by_submission.end()) continue; // corpus guarantees linkage
        ++result.n_ratings;
        const corpus::FeedbackMessage& feedback = fb_it->second;

        auto ped_it = pedagogy_by_id.find(feedback.feedback_id);
        if (ped_it == pedagogy_by_id.end()) {
            ++result.n_missing_pedagogy;
            result.warnings.push_back("rated feedback '" + feedback.feedback_id +
                                      "' has no pedagogy annotation; row dropped");
            continue;
        }

        HelpfulnessRow row;
        row.feedback_id = feedback.feedback_id;
        row.y = binarize_rating(rating.likert, likert_threshold);
        const auto names = dimension_names();
        for (std::size_t j = 0; j < names.size(); ++j) {
            const std::string dim(names[j]);
            row.pedagogy[j] = rubric.matches(dim, ped_it->second->labels.at(dim)) ? 1 : 0;
        }
        const corpus::Submission* submission = c.find_submission(submission_id);
        row.baseline_indicator =
            submission && submission->tutor_id == baseline_tutor_id ? 1 : 0;

        auto eng_it = engagement_by_id.find(feedback.feedback_id);
        if (eng_it == engagement_by_id.end()) {
            ++result.n_missing_engagement;
        } else {
            row.rel_score = eng_it->second->rel_score;
            if (eng_it->second->succ_score) {
                row.succ_score = *eng_it->second->succ_score;
            } else {
                ++result.n_missing_succ;
            }
        }
        result.rows.push_back(std::move(row));
    }
    return result;
}

namespace {

// One covariate column: its name plus an extractor over rows.
struct Column {
    std::string name;
    std::vector<double> values;
};

bool has_variance(const std::vector<double>& values) {
    return std::any_of(values.begin(), values.end(),
                       [&](double v) { return v != values.front(); });
}

ModelFit fit_model(const std::string& model_name,
                   const std::vector<const HelpfulnessRow*>& rows,
                   std::vector<Column> columns,
                   std::size_t n_excluded,
                   std::vector<std::string>& warnings) {
    ModelFit fit;
    fit.model = model_name;
    fit.n_rows = rows.size();
    fit.n_excluded = n_excluded;

    std::vector<Column> kept;
    for (Column& col : columns) {
        if (has_variance(col.values)) {
            kept.push_back(std::move(col));
        } else {
            fit.dropped.push_back(col.name);
            warnings.push_back("covariate '" + col.name + "' dropped from " + model_name +
                               " model: no variance across " + std::to_string(rows.size()) +
                               " rows");
        }
    }

    stats::Matrix X(rows.size(), kept.size() + 1);
    std::vector<int> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < kept.size(); ++j) {
            X.at(i, j) = kept[j].values[i];
        }
        X.at(i, kept.size()) = 1.0; // intercept
        y[i] = rows[i]->y;
    }
    for (const Column& col : kept) fit.covariates.push_back(col.name);
    fit.covariates.push_back("intercept");
    fit.fit = stats::logit_fit(X, y, fit.covariates);
    return fit;
}

std::vector<Column> pedagogy_columns(const std::vector<const HelpfulnessRow*>& rows) {
    std::vector<Column> columns;
    const auto names = dimension_names();
    for (std::size_t j = 0; j < names.size(); ++j) {
        Column col{std::string(names[j]), {}};
        col.values.reserve(rows.size());
        for (const HelpfulnessRow* row : rows) {
            col.values.push_back(static_cast<double>(row->pedagogy[j]));
        }
        columns.push_back(std::move(col));
    }
    return columns;
}

std::vector<Column> engagement_columns(const std::vector<const HelpfulnessRow*>& rows) {
    Column rel{"rel_score", {}};
    Column succ{"succ_score", {}};
    for (const HelpfulnessRow* row : rows) {
        rel.values.push_back(*row->rel_score);
        succ.values.push_back(*row->succ_score);
    }
    return {std::move(rel), std::move(succ)};
}

Column baseline_column(const std::vector<const HelpfulnessRow*>& rows) {
    Column col{"baseline_tutor", {}};
    for (const HelpfulnessRow* row : rows) {
        col.values.push_back(static_cast<double>(row->baseline_indicator));
    }
    return col;
}

} // namespace

ModelSet run_models(const std::vector<HelpfulnessRow>& rows) {
    if (rows.empty()) {
        throw ValidationError("no helpfulness rows to model");
    }
    std::vector<const HelpfulnessRow*> all;
    std::vector<const HelpfulnessRow*> with_engagement;
    for (const HelpfulnessRow& row : rows) {
        all.push_back(&row);
        if (row.rel_score && row.succ_score) with_engagement.push_back(&row);
    }
    const std::size_t engagement_excluded = all.size() - with_engagement.size();

    ModelSet set;

    {
        std::vector<Column> columns = pedagogy_columns(all);
        columns.push_back(baseline_column(all));
        set.pedagogy_only = fit_model("pedagogy_only", all, std::move(columns), 0, set.warnings);
    }

    if (with_engagement.empty()) {
        set.warnings.push_back(
            "engagement_only and combined models skipped: no rows carry rel and succ scores");
        return set;
    }

    {
        std::vector<Column> columns = engagement_columns(with_engagement);
        columns.push_back(baseline_column(with_engagement));
        set.engagement_only = fit_model("engagement_only", with_engagement, std::move(columns),
                                        engagement_excluded, set.warnings);
    }
    {
        std::vector<Column> columns = pedagogy_columns(with_engagement);
        std::vector<Column> engagement = engagement_columns(with_engagement);
        columns.insert(columns.end(), std::make_move_iterator(engagement.begin()),
                       std::make_move_iterator(engagement.end()));
        columns.push_back(baseline_column(with_engagement));
        set.combined = fit_model("combined", with_engagement, std::move(columns),
                                 engagement_excluded, set.warnings);
    }
    return set;
}

std::string significance_stars(double p) {
    if (p < 0.001) return "***";
    if (p < 0.01) return "**";
    if (p < 0.05) return "*";
    return "";
}

namespace {

void append_model_rows(csv::Writer& writer, const ModelFit& model) {
    for (std::size_t j = 0; j < model.covariates.size(); ++j) {
        writer.row({
            model.covariates[j],
            model.model,
            util::format_fixed(model.fit.coefficients[j], 3),
            util::format_fixed(model.fit.standard_errors[j], 3),
            util::format_double(model.fit.p_values[j]),
            significance_stars(model.fit.p_values[j]),
        });
    }
    writer.row({"n", model.model, std::to_string(model.n_rows), "", "", ""});
    writer.row({"pseudo_r2", model.model, util::format_fixed(model.fit.pseudo_r2, 4), "", "", ""});
}

} // namespace

std::string regression_table_csv(const ModelSet& models) {
    csv::Writer writer;
    writer.row({"covariate", "model", "beta", "se", "p", "stars"});
    if (models.pedagogy_only) append_model_rows(writer, *models.pedagogy_only);
    if (models.engagement_only) append_model_rows(writer, *models.engagement_only);
    if (models.combined) append_model_rows(writer, *models.combined);
    return writer.str();
}

} // namespace tutoreval::perception
