#include "tutoreval/report.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "tutoreval/csv.hpp"
#include "tutoreval/dimensions.hpp"
#include "tutoreval/util.hpp"

namespace tutoreval::report {

using util::format_double;
using util::format_fixed;

namespace {

std::string percent(double fraction) { return format_fixed(fraction * 100.0, 2); }

std::string bold(const std::string& text) { return "**" + text + "**"; }

// "<.001" below a milli, else three decimals; a trailing star marks p < 0.05.
std::string p_cell(double p) {
    std::string text = p < 0.001 ? "<.001" : format_fixed(p, 3);
    if (p < 0.05) text += "*";
    return text;
}

std::string markdown_table(const std::vector<std::string>& header,
                           const std::vector<std::vector<std::string>>& rows) {
    std::ostringstream out;
    auto emit_row = [&out](const std::vector<std::string>& cells) {
        out << "|";
        for (const auto& cell : cells) out << " " << cell << " |";
        out << "\n";
    };
    emit_row(header);
    out << "|";
    for (std::size_t i = 0; i < header.size(); ++i) out << " --- |";
    out << "\n";
    for (const auto& row : rows) emit_row(row);
    return out.str();
}

} // namespace

TableOutput emit_damr_table(const std::vector<DamrComparisonRow>& rows,
                            const std::string& tutor_a,
                            const std::string& tutor_b) {
    std::vector<std::vector<std::string>> body;
    csv::Writer machine;
    machine.row({"dimension", "rate_a", "matched_a", "total_a", "rate_b", "matched_b",
                 "total_b", "cohens_h", "p_holm", "significant"});
    for (const auto& row : rows) {
        std::string cell_a = percent(row.rate_a);
        std::string cell_b = percent(row.rate_b);
        if (row.rate_a >= row.rate_b) cell_a = bold(cell_a);
        if (row.rate_b >= row.rate_a) cell_b = bold(cell_b);
        body.push_back({row.dimension, cell_a, cell_b,
                        format_fixed(row.cohens_h, 3), p_cell(row.p_holm)});
        machine.row({row.dimension, format_double(row.rate_a),
                     std::to_string(row.matched_a), std::to_string(row.total_a),
                     format_double(row.rate_b), std::to_string(row.matched_b),
                     std::to_string(row.total_b), format_double(row.cohens_h),
                     format_double(row.p_holm), row.p_holm < 0.05 ? "1" : "0"});
    }
    TableOutput out;
    out.markdown = "# Desired annotation match rate by dimension (%)\n\n" +
                   markdown_table({"dimension", tutor_a, tutor_b, "Cohen's h", "Holm p"}, body) +
                   "\nThe higher rate per dimension is bolded; ties bold both. "
                   "`*` marks Holm-adjusted p < 0.05.\n";
    out.csv = machine.str();
    return out;
}

TableOutput emit_engagement_table(const std::vector<EngagementComparisonRow>& rows,
                                  const std::string& tutor_a,
                                  const std::string& tutor_b) {
    std::vector<std::vector<std::string>> body;
    csv::Writer machine;
    machine.row({"assignment", "metric", "mean_a", "sd_a", "n_a", "n_excluded_a",
                 "mean_b", "sd_b", "n_b", "n_excluded_b", "p_holm", "significant"});
    for (const auto& row : rows) {
        std::string cell_a = percent(row.mean_a) + " ± " + percent(row.sd_a);
        std::string cell_b = percent(row.mean_b) + " ± " + percent(row.sd_b);
        // Unlike the rate table, equal means stay unmarked: a bolded tie would
        // suggest a winner where the comparison found none.
        if (row.mean_a > row.mean_b) cell_a = bold(cell_a);
        if (row.mean_b > row.mean_a) cell_b = bold(cell_b);
        body.push_back({row.assignment, row.metric, cell_a, cell_b, p_cell(row.p_holm)});
        machine.row({row.assignment, row.metric, format_double(row.mean_a),
                     format_double(row.sd_a), std::to_string(row.n_a),
                     std::to_string(row.n_excluded_a), format_double(row.mean_b),
                     format_double(row.sd_b), std::to_string(row.n_b),
                     std::to_string(row.n_excluded_b), format_double(row.p_holm),
                     row.p_holm < 0.05 ? "1" : "0"});
    }
    TableOutput out;
    out.markdown = "# Engagement scores by assignment (mean ± sd, %)\n\n" +
                   markdown_table({"assignment", "metric", tutor_a, tutor_b, "Holm p"}, body) +
                   "\nThe strictly higher mean per row is bolded. "
                   "`*` marks Holm-adjusted p < 0.05. Success scores are means over "
                   "feedbacks where the score is defined.\n";
    out.csv = machine.str();
    return out;
}

namespace {

const perception::ModelFit* model_or_null(const std::optional<perception::ModelFit>& slot) {
    return slot ? &*slot : nullptr;
}

// "0.420*** (0.127)" for a fitted covariate, "--" when the model lacks it.
std::string coefficient_cell(const perception::ModelFit* model, const std::string& covariate) {
    if (model == nullptr) return "--";
    for (std::size_t i = 0; i < model->covariates.size(); ++i) {
        if (model->covariates[i] != covariate) continue;
        return format_fixed(model->fit.coefficients[i], 3) +
               perception::significance_stars(model->fit.p_values[i]) + " (" +
               format_fixed(model->fit.standard_errors[i], 3) + ")";
    }
    return "--";
}

} // namespace

TableOutput emit_regression_table(const perception::ModelSet& models) {
    struct Column {
        std::string title;
        std::string key;
        const perception::ModelFit* model;
    };
    std::vector<Column> columns = {
        {"Pedagogy only", "pedagogy_only", model_or_null(models.pedagogy_only)},
        {"Engagement only", "engagement_only", model_or_null(models.engagement_only)},
        {"Combined", "combined", model_or_null(models.combined)},
    };

    std::set<std::string> present;
    for (const auto& column : columns) {
        if (column.model == nullptr) continue;
        for (const auto& name : column.model->covariates) present.insert(name);
    }

    std::vector<std::string> row_order;
    for (const auto& name : dimension_names()) row_order.emplace_back(name);
    row_order.push_back("rel_score");
    row_order.push_back("succ_score");
    row_order.push_back("baseline_tutor");

    std::vector<std::vector<std::string>> body;
    for (const auto& covariate : row_order) {
        if (present.count(covariate) == 0) continue;
        std::vector<std::string> cells = {covariate};
        for (const auto& column : columns) cells.push_back(coefficient_cell(column.model, covariate));
        body.push_back(std::move(cells));
    }
    std::vector<std::string> r2_row = {"Pseudo R2"};
    std::vector<std::string> n_row = {"n"};
    for (const auto& column : columns) {
        r2_row.push_back(column.model ? format_fixed(column.model->fit.pseudo_r2, 4) : "--");
        n_row.push_back(column.model ? std::to_string(column.model->n_rows) : "--");
    }
    body.push_back(std::move(r2_row));
    body.push_back(std::move(n_row));

    // Footnote: which covariates were dropped from which models for no variance.
    std::map<std::string, std::vector<std::string>> dropped;
    for (const auto& column : columns) {
        if (column.model == nullptr) continue;
        for (const auto& name : column.model->dropped) dropped[name].push_back(column.key);
    }

    std::ostringstream md;
    md << "# Helpfulness models (logistic coefficients)\n\n";
    std::vector<std::string> header = {"covariate"};
    for (const auto& column : columns) header.push_back(column.title);
    md << markdown_table(header, body);
    md << "\nCells show coefficient (standard error); `*` p<0.05, `**` p<0.01, "
          "`***` p<0.001. `--` means the covariate is not part of that model.\n";
    for (const auto& [name, model_keys] : dropped) {
        md << "\nNote: `" << name << "` dropped for zero variance from: ";
        for (std::size_t i = 0; i < model_keys.size(); ++i) {
            if (i > 0) md << ", ";
            md << model_keys[i];
        }
        md << ".\n";
    }

    TableOutput out;
    out.markdown = md.str();
    out.csv = perception::regression_table_csv(models);
    return out;
}

namespace {

const std::array<const char*, 8> kBarPalette = {
    "#4c78a8", "#f58518", "#54a24b", "#e45756",
    "#72b7b2", "#b279a2", "#eeca3b", "#9d755d",
};

double nice_limit(double max_abs) {
    if (max_abs <= 0.0) return 5.0;
    return std::ceil(max_abs / 5.0) * 5.0;
}

} // namespace

DeltaChart emit_delta_chart(const std::vector<metrics::DamrDelta>& deltas,
                            const std::vector<std::string>& omit_dimensions) {
    std::set<std::string> omitted(omit_dimensions.begin(), omit_dimensions.end());

    std::vector<metrics::DamrDelta> kept;
    for (const auto& delta : deltas) {
        if (omitted.count(delta.dimension) == 0) kept.push_back(delta);
    }

    std::vector<std::string> assignments;
    for (const auto& delta : kept) {
        if (std::find(assignments.begin(), assignments.end(), delta.assignment_id) ==
            assignments.end()) {
            assignments.push_back(delta.assignment_id);
        }
    }
    std::vector<std::string> dims;
    for (const auto& name : dimension_names()) {
        for (const auto& delta : kept) {
            if (delta.dimension == name) {
                dims.push_back(std::string(name));
                break;
            }
        }
    }

    auto value_of = [&kept](const std::string& assignment, const std::string& dim) {
        for (const auto& delta : kept) {
            if (delta.assignment_id == assignment && delta.dimension == dim) return delta.delta_points;
        }
        return 0.0;
    };

    double max_abs = 0.0;
    bool any_negative = false;
    for (const auto& delta : kept) {
        max_abs = std::max(max_abs, std::abs(delta.delta_points));
        if (delta.delta_points < 0.0) any_negative = true;
    }
    const double limit = nice_limit(max_abs);
    const double y_max = limit;
    const double y_min = any_negative ? -limit : 0.0;

    const double margin_left = 56.0;
    const double margin_top = 24.0;
    const double margin_bottom = 48.0;
    const double plot_h = 240.0;
    const double bar_w = 18.0;
    const double bar_gap = 4.0;
    const double group_gap = 36.0;
    const double group_w =
        dims.empty() ? 0.0
                     : static_cast<double>(dims.size()) * bar_w +
                           static_cast<double>(dims.size() - 1) * bar_gap;
    const double legend_w = 170.0;
    const double plot_w =
        assignments.empty()
            ? 200.0
            : static_cast<double>(assignments.size()) * (group_w + group_gap);
    const double width = margin_left + plot_w + legend_w;
    const double height = margin_top + plot_h + margin_bottom;

    auto y_of = [&](double value) {
        return margin_top + plot_h * (y_max - value) / (y_max - y_min);
    };
    const double y_zero = y_of(0.0);

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << format_fixed(width, 0)
        << "\" height=\"" << format_fixed(height, 0) << "\" viewBox=\"0 0 "
        << format_fixed(width, 0) << " " << format_fixed(height, 0) << "\">\n";
    svg << "  <style>text { font: 11px sans-serif; fill: #333; }</style>\n";

    // y axis with ticks at min, zero and max
    svg << "  <line x1=\"" << format_fixed(margin_left, 2) << "\" y1=\""
        << format_fixed(margin_top, 2) << "\" x2=\"" << format_fixed(margin_left, 2)
        << "\" y2=\"" << format_fixed(margin_top + plot_h, 2)
        << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
    for (double tick : {y_min, 0.0, y_max}) {
        if (tick == 0.0 && y_min == 0.0) continue; // zero coincides with the min tick
        svg << "  <text x=\"" << format_fixed(margin_left - 8.0, 2) << "\" y=\""
            << format_fixed(y_of(tick) + 4.0, 2) << "\" text-anchor=\"end\">"
            << format_fixed(tick, 0) << "</text>\n";
    }
    svg << "  <text x=\"14\" y=\"" << format_fixed(margin_top + plot_h / 2.0, 2)
        << "\" transform=\"rotate(-90 14 " << format_fixed(margin_top + plot_h / 2.0, 2)
        << ")\" text-anchor=\"middle\">DAMR delta (points)</text>\n";

    csv::Writer machine;
    machine.row({"assignment", "dimension", "delta_points"});
    for (std::size_t g = 0; g < assignments.size(); ++g) {
        const double group_x =
            margin_left + group_gap / 2.0 + static_cast<double>(g) * (group_w + group_gap);
        for (std::size_t d = 0; d < dims.size(); ++d) {
            const double value = value_of(assignments[g], dims[d]);
            const double x = group_x + static_cast<double>(d) * (bar_w + bar_gap);
            const double bar_h = std::abs(value) / (y_max - y_min) * plot_h;
            const double y = value >= 0.0 ? y_of(value) : y_zero;
            svg << "  <rect class=\"bar\" data-assignment=\"" << assignments[g]
                << "\" data-dimension=\"" << dims[d] << "\" data-value=\""
                << format_double(value) << "\" x=\"" << format_fixed(x, 2) << "\" y=\""
                << format_fixed(y, 2) << "\" width=\"" << format_fixed(bar_w, 2)
                << "\" height=\"" << format_fixed(bar_h, 2) << "\" fill=\"" << kBarPalette[d % 8]
                << "\"/>\n";
            machine.row({assignments[g], dims[d], format_double(value)});
        }
        svg << "  <text x=\"" << format_fixed(group_x + group_w / 2.0, 2) << "\" y=\""
            << format_fixed(margin_top + plot_h + 18.0, 2)
            << "\" text-anchor=\"middle\">assignment " << assignments[g] << "</text>\n";
    }

    // zero line across the plot, drawn after the bars so it stays visible
    svg << "  <line class=\"zero-line\" x1=\"" << format_fixed(margin_left, 2) << "\" y1=\""
        << format_fixed(y_zero, 2) << "\" x2=\"" << format_fixed(margin_left + plot_w, 2)
        << "\" y2=\"" << format_fixed(y_zero, 2) << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";

    const double legend_x = margin_left + plot_w + 16.0;
    for (std::size_t d = 0; d < dims.size(); ++d) {
        const double y = margin_top + static_cast<double>(d) * 18.0;
        svg << "  <rect x=\"" << format_fixed(legend_x, 2) << "\" y=\"" << format_fixed(y, 2)
            << "\" width=\"12\" height=\"12\" fill=\"" << kBarPalette[d % 8] << "\"/>\n";
        svg << "  <text x=\"" << format_fixed(legend_x + 18.0, 2) << "\" y=\""
            << format_fixed(y + 10.0, 2) << "\">" << dims[d] << "</text>\n";
    }
    svg << "</svg>\n";

    DeltaChart chart;
    chart.svg = svg.str();
    chart.csv = machine.str();
    return chart;
}

std::string summary_json(const RunSummary& summary) {
    nlohmann::json j;
    j["tool_version"] = summary.tool_version;
    j["corpus_digests"] = summary.corpus_digests;
    j["config"] = summary.config_snapshot;
    j["payloads"] = summary.payloads;
    j["warnings"] = summary.warnings;
    return j.dump(2) + "\n";
}

} // namespace tutoreval::report
