#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "tutoreval/dimensions.hpp"
#include "tutoreval/errors.hpp"
#include "tutoreval/metrics.hpp"

using namespace tutoreval;
using judge::EngagementAnnotation;
using judge::PedagogyAnnotation;
using metrics::DesiredLabelRubric;

namespace {

PedagogyAnnotation annotation_with(const std::string& id,
                                   const std::map<std::string, int>& overrides = {}) {
    PedagogyAnnotation a;
    a.feedback_id = id;
    for (const auto& name : dimension_names()) a.labels[std::string(name)] = 1;
    a.labels["revealing_answer"] = 3;
    for (const auto& [k, v] : overrides) a.labels[k] = v;
    return a;
}

// rel bits with succ values consumed left to right for the rel=1 slots.
EngagementAnnotation engagement_with(const std::string& id, const std::vector<int>& rel,
                                     const std::vector<int>& succ) {
    EngagementAnnotation a;
    a.feedback_id = id;
    std::size_t next_succ = 0;
    for (std::size_t i = 0; i < rel.size(); ++i) {
        judge::SentenceAttribution s;
        s.sentence_index = static_cast<int>(i);
        s.rel = rel[i];
        if (rel[i] == 1) {
            s.succ = succ.at(next_succ++);
            s.rationale = "edit shows it";
        }
        a.per_sentence.push_back(s);
    }
    return a;
}

} // namespace

// ---------------------------------------------------------------------------
// Rubric
// ---------------------------------------------------------------------------

TEST_CASE("rubric defaults") {
    const auto rubric = DesiredLabelRubric::defaults();
    for (const auto& name : dimension_names()) {
        const std::string dim(name);
        if (dim == "revealing_answer") {
            CHECK(rubric.desired(dim) == std::set<int>{3});
        } else if (dim == "tutor_tone") {
            CHECK(rubric.desired(dim) == std::set<int>{1, 2});
        } else {
            CHECK(rubric.desired(dim) == std::set<int>{1});
        }
    }
    CHECK(rubric.matches("tutor_tone", 2));
    CHECK(!rubric.matches("tutor_tone", 3));
    CHECK(rubric.matches("revealing_answer", 3));
    CHECK(!rubric.matches("revealing_answer", 1));
}

TEST_CASE("rubric overrides are validated") {
    auto rubric = DesiredLabelRubric::defaults();
    rubric.set_desired("coherence", {1, 2});
    CHECK(rubric.matches("coherence", 2));
    CHECK_THROWS_AS(rubric.set_desired("tempo", {1}), ValidationError);
    CHECK_THROWS_AS(rubric.set_desired("coherence", {}), ValidationError);
    CHECK_THROWS_AS(rubric.set_desired("coherence", {0}), ValidationError);
    CHECK_THROWS_AS(rubric.set_desired("coherence", {4}), ValidationError);
    CHECK_THROWS_AS(rubric.desired("tempo"), ValidationError);
}

// ---------------------------------------------------------------------------
// DAMR
// ---------------------------------------------------------------------------

TEST_CASE("damr counts desired labels") {
    const auto rubric = DesiredLabelRubric::defaults();
    const std::vector<PedagogyAnnotation> annotations = {
        annotation_with("fb-1"),
        annotation_with("fb-2", {{"mistake_identification", 2}}),
        annotation_with("fb-3", {{"mistake_identification", 3}}),
        annotation_with("fb-4"),
    };
    const auto result = metrics::damr(annotations, "mistake_identification", rubric);
    CHECK(result.rate == 0.5);
    CHECK(result.matched == 2);
    CHECK(result.total == 4);

    // revealing_answer desires label 3, so fb-3's override does not help it here
    const auto revealing = metrics::damr(annotations, "revealing_answer", rubric);
    CHECK(revealing.rate == 1.0);

    const std::vector<PedagogyAnnotation> three_of_four = {
        annotation_with("fb-1"), annotation_with("fb-2"),
        annotation_with("fb-3", {{"tutor_tone", 2}}),
        annotation_with("fb-4", {{"tutor_tone", 3}}),
    };
    CHECK(metrics::damr(three_of_four, "tutor_tone", rubric).rate == 0.75);
}

TEST_CASE("damr rejects bad inputs") {
    const auto rubric = DesiredLabelRubric::defaults();
    CHECK_THROWS_AS(metrics::damr({}, "coherence", rubric), ValidationError);
    CHECK_THROWS_AS(metrics::damr({annotation_with("fb-1")}, "tempo", rubric), ValidationError);
    auto cropped = annotation_with("fb-1");
    cropped.labels.erase("coherence");
    CHECK_THROWS_AS(metrics::damr({cropped}, "coherence", rubric), ValidationError);
}

TEST_CASE("damr is invariant under annotation order") {
    const auto rubric = DesiredLabelRubric::defaults();
    std::vector<PedagogyAnnotation> annotations;
    std::mt19937 rng(7);
    for (int i = 0; i < 40; ++i) {
        annotations.push_back(annotation_with(
            "fb-" + std::to_string(i),
            {{"providing_guidance", static_cast<int>(1 + rng() % 3)}}));
    }
    const auto before = metrics::damr(annotations, "providing_guidance", rubric);
    std::shuffle(annotations.begin(), annotations.end(), rng);
    const auto after = metrics::damr(annotations, "providing_guidance", rubric);
    CHECK(before.rate == after.rate);
    CHECK(before.matched == after.matched);
    CHECK(before.total == after.total);
}

// ---------------------------------------------------------------------------
// Engagement scores
// ---------------------------------------------------------------------------

TEST_CASE("rel_score is the fraction of relevant sentences") {
    CHECK(metrics::rel_score(engagement_with("fb", {1, 0, 1, 0}, {1, 0})) == 0.5);
    CHECK(metrics::rel_score(engagement_with("fb", {0, 0}, {})) == 0.0);
    CHECK(metrics::rel_score(engagement_with("fb", {1}, {1})) == 1.0);
}

TEST_CASE("succ_score divides successes by relevant sentences") {
    const auto half = metrics::succ_score(engagement_with("fb", {1, 1, 0}, {1, 0}));
    REQUIRE(half.has_value());
    CHECK(*half == 0.5);

    // no relevant sentence: the ratio is missing data, not zero
    CHECK(!metrics::succ_score(engagement_with("fb", {0, 0, 0}, {})).has_value());

    const auto scores = metrics::engagement_scores(engagement_with("fb-7", {1, 0}, {1}));
    CHECK(scores.feedback_id == "fb-7");
    CHECK(scores.rel_score == 0.5);
    REQUIRE(scores.succ_score.has_value());
    CHECK(*scores.succ_score == 1.0);
}

TEST_CASE("score helpers validate their input") {
    EngagementAnnotation bad;
    bad.feedback_id = "fb";
    bad.per_sentence = {{0, 2, std::nullopt, ""}};
    CHECK_THROWS_AS(metrics::rel_score(bad), ValidationError);
    CHECK_THROWS_AS(metrics::succ_score(bad), ValidationError);
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

TEST_CASE("aggregate_engagement groups by tutor and assignment") {
    std::vector<metrics::EngagementScoreRow> rows = {
        {"alpha", "1", {"fb-1", 0.5, 1.0}},
        {"alpha", "1", {"fb-2", 1.0, 0.5}},
        {"alpha", "2", {"fb-3", 0.0, std::nullopt}},
        {"beta", "1", {"fb-4", 0.25, std::nullopt}},
        {"beta", "1", {"fb-5", 0.75, 1.0}},
    };
    const auto summary = metrics::aggregate_engagement(rows);
    REQUIRE(summary.size() == 6); // three buckets x {rel, succ}

    const auto& alpha1_rel = summary[0];
    CHECK(alpha1_rel.tutor_id == "alpha");
    CHECK(alpha1_rel.group == "1");
    CHECK(alpha1_rel.metric == "rel_score");
    CHECK(alpha1_rel.mean == doctest::Approx(0.75));
    CHECK(alpha1_rel.sd == doctest::Approx(std::sqrt(0.125)));
    CHECK(alpha1_rel.n == 2);
    CHECK(alpha1_rel.n_excluded == 0);

    const auto& alpha1_succ = summary[1];
    CHECK(alpha1_succ.metric == "succ_score");
    CHECK(alpha1_succ.mean == doctest::Approx(0.75));
    CHECK(alpha1_succ.n == 2);

    // all succ values absent: empty row with NaN mean, exclusions surfaced
    const auto& alpha2_succ = summary[3];
    CHECK(alpha2_succ.group == "2");
    CHECK(alpha2_succ.metric == "succ_score");
    CHECK(alpha2_succ.n == 0);
    CHECK(alpha2_succ.n_excluded == 1);
    CHECK(std::isnan(alpha2_succ.mean));

    const auto& beta1_succ = summary[5];
    CHECK(beta1_succ.n == 1);
    CHECK(beta1_succ.n_excluded == 1);
    CHECK(beta1_succ.mean == 1.0);
    CHECK(beta1_succ.sd == 0.0); // single value: sd defined as 0
}

TEST_CASE("aggregate_pedagogy emits one row per tutor and dimension") {
    const std::vector<metrics::PedagogyRow> rows = {
        {"alpha", "1", annotation_with("fb-1")},
        {"alpha", "1", annotation_with("fb-2", {{"mistake_identification", 2}})},
        {"alpha", "2", annotation_with("fb-3", {{"mistake_identification", 3}})},
        {"alpha", "2", annotation_with("fb-4")},
        {"beta", "1", annotation_with("fb-5")},
    };
    const auto summary = metrics::aggregate_pedagogy(rows, DesiredLabelRubric::defaults());
    REQUIRE(summary.size() == 16);
    CHECK(summary[0].tutor_id == "alpha");
    CHECK(summary[0].group == "mistake_identification");
    CHECK(summary[0].metric == "damr");
    CHECK(summary[0].mean == 0.5);
    CHECK(summary[0].sd == doctest::Approx(std::sqrt(1.0 / 3.0)));
    CHECK(summary[0].n == 4);
    // dimensions follow canonical order within a tutor
    CHECK(summary[1].group == "mistake_location");
    CHECK(summary[1].mean == 1.0);
    CHECK(summary[8].tutor_id == "beta");
    CHECK(summary[8].n == 1);
}

TEST_CASE("damr_by_dimension pools assignments, damr_by_assignment keeps them") {
    const std::vector<metrics::PedagogyRow> rows = {
        {"alpha", "1", annotation_with("fb-1", {{"actionability", 2}})},
        {"alpha", "2", annotation_with("fb-2")},
    };
    const auto rubric = DesiredLabelRubric::defaults();

    const auto pooled = metrics::damr_by_dimension(rows, rubric);
    REQUIRE(pooled.size() == 8);
    for (const auto& cell : pooled) {
        CHECK(cell.assignment_id == "overall");
        CHECK(cell.result.total == 2);
        if (cell.dimension == "actionability") CHECK(cell.result.rate == 0.5);
    }

    const auto split = metrics::damr_by_assignment(rows, rubric);
    REQUIRE(split.size() == 16);
    for (const auto& cell : split) {
        CHECK(cell.result.total == 1);
        if (cell.dimension == "actionability") {
            CHECK(cell.result.rate == (cell.assignment_id == "1" ? 0.0 : 1.0));
        }
    }
}

// ---------------------------------------------------------------------------
// DAMR deltas
// ---------------------------------------------------------------------------

namespace {

std::vector<metrics::DamrCell> cell_grid(const std::string& tutor,
                                         const std::map<std::string, double>& rates) {
    // one assignment, all 8 dimensions at rates[dim] (default 0.9)
    std::vector<metrics::DamrCell> cells;
    for (const auto& name : dimension_names()) {
        const std::string dim(name);
        const double rate = rates.count(dim) ? rates.at(dim) : 0.9;
        metrics::DamrCell cell;
        cell.tutor_id = tutor;
        cell.assignment_id = "1";
        cell.dimension = dim;
        cell.result = {rate, static_cast<std::size_t>(rate * 20), 20};
        cells.push_back(cell);
    }
    return cells;
}

} // namespace

TEST_CASE("damr_delta of identical tables is all zeros") {
    const auto a = cell_grid("alpha", {});
    const auto b = cell_grid("beta", {});
    const auto deltas = metrics::damr_delta(a, b);
    REQUIRE(deltas.size() == 8);
    for (const auto& d : deltas) CHECK(d.delta_points == 0.0);
}

TEST_CASE("damr_delta reports signed percentage points in canonical order") {
    const auto a = cell_grid("alpha", {});
    const auto b = cell_grid("beta", {{"coherence", 0.95}, {"humanness", 0.85}});
    const auto deltas = metrics::damr_delta(a, b);
    REQUIRE(deltas.size() == 8);
    // rows follow canonical dimension order within the assignment
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(deltas[i].dimension == std::string(dimension_names()[i]));
    }
    for (const auto& d : deltas) {
        if (d.dimension == "coherence") {
            CHECK(d.delta_points == doctest::Approx(5.0));
        } else if (d.dimension == "humanness") {
            CHECK(d.delta_points == doctest::Approx(-5.0));
        } else {
            CHECK(d.delta_points == doctest::Approx(0.0));
        }
    }
}

TEST_CASE("damr_delta wants matching cells") {
    auto a = cell_grid("alpha", {});
    auto b = cell_grid("beta", {});
    b.pop_back();
    try {
        metrics::damr_delta(a, b);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        const std::string what = e.what();
        CHECK(what.find("do not cover the same cells") != std::string::npos);
        CHECK(what.find("humanness") != std::string::npos);
    }
}

// ---------------------------------------------------------------------------
// CSV rendering
// ---------------------------------------------------------------------------

TEST_CASE("metric_table_csv renders percentages and empty cells") {
    std::vector<metrics::GroupSummary> rows(2);
    rows[0] = {"alpha", "overall", "rel_score", 0.9415, 0.1234, 12, 0};
    rows[1] = {"beta", "hw1", "succ_score", std::numeric_limits<double>::quiet_NaN(),
               std::numeric_limits<double>::quiet_NaN(), 0, 3};
    CHECK(metrics::metric_table_csv(rows) ==
          "tutor,group,metric,mean,sd,n,n_excluded\n"
          "alpha,overall,rel_score,94.15,12.34,12,0\n"
          "beta,hw1,succ_score,,,0,3\n");
}
