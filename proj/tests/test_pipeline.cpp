#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "json.hpp"

#include "test_support.hpp"
#include "tutoreval/dimensions.hpp"
#include "tutoreval/errors.hpp"
#include "tutoreval/pipeline.hpp"
#include "tutoreval/util.hpp"

using namespace tutoreval;
using nlohmann::json;
using test_support::TempDir;
using test_support::slurp;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = TEST_FIXTURE_DIR;

json fixture_config(const TempDir& dir) {
    json cfg;
    cfg["submissions"] = (kFixtures / "submissions.jsonl").string();
    cfg["feedback"] = (kFixtures / "feedback.jsonl").string();
    cfg["backend"] = {{"kind", "fixture"},
                      {"transcript", (kFixtures / "judge_transcript.jsonl").string()}};
    cfg["out_dir"] = (dir / "out").string();
    return cfg;
}

fs::path write_config(const TempDir& dir, const json& cfg,
                      const std::string& name = "config.json") {
    const fs::path path = dir / name;
    util::write_file(path, cfg.dump(2) + "\n");
    return path;
}

void expect_config_error(const json& raw, const std::string& needle) {
    try {
        pipeline::parse_config(raw);
        FAIL("expected ConfigError containing '" << needle << "'");
    } catch (const ConfigError& e) {
        CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
    }
}

json read_summary(const fs::path& out_dir) { return json::parse(slurp(out_dir / "summary.json")); }

struct CliResult {
    int code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args, const TempDir& scratch) {
    static int counter = 0;
    const fs::path log = scratch / ("cli-" + std::to_string(counter++) + ".log");
    const std::string command =
        std::string("\"") + TUTOREVAL_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(command.c_str());
    CliResult result;
    result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    result.output = slurp(log);
    return result;
}

std::string quoted(const fs::path& path) { return "\"" + path.string() + "\""; }

} // namespace

// ---------------------------------------------------------------------------
// Configuration parsing
// ---------------------------------------------------------------------------

TEST_CASE("empty config yields the documented defaults") {
    const pipeline::RunConfig config = pipeline::parse_config(json::object());
    CHECK(config.backend.kind == "fixture");
    CHECK(config.out_dir == "out");
    CHECK(config.min_undesired_n == 15);
    CHECK(config.likert_threshold == 4);
    CHECK(config.parallelism == 1);
    CHECK(config.seed == 42);
    CHECK(config.baseline_tutor.empty());
    CHECK(config.cache_path() == fs::path("out") / "cache");
    CHECK(config.annotations_path() == fs::path("out") / "annotations");
    // defaults rubric: desired {1} everywhere except revealing_answer and tone
    const auto desired = config.rubric.desired_by_dimension();
    CHECK(desired.at("mistake_identification") == std::set<int>{1});
    CHECK(desired.at("revealing_answer") == std::set<int>{3});
    CHECK(desired.at("tutor_tone") == std::set<int>{1, 2});
}

TEST_CASE("explicit cache and annotation dirs win over the out_dir layout") {
    json raw = {{"out_dir", "elsewhere"}, {"cache_dir", "/tmp/c"}, {"annotations_dir", "/tmp/a"}};
    const pipeline::RunConfig config = pipeline::parse_config(raw);
    CHECK(config.cache_path() == fs::path("/tmp/c"));
    CHECK(config.annotations_path() == fs::path("/tmp/a"));
}

TEST_CASE("a fully-populated config round trips into RunConfig") {
    json raw;
    raw["submissions"] = "s.jsonl";
    raw["feedback"] = "f.jsonl";
    raw["ratings"] = "r.jsonl";
    raw["backend"] = {{"kind", "remote"},         {"endpoint", "http://judge.local/v1/chat"},
                      {"model", "judge-large"},   {"api_key_env", "JUDGE_KEY"},
                      {"temperature", 0.25},      {"max_retries", 5},
                      {"initial_backoff_ms", 10}, {"timeout_seconds", 30}};
    raw["cache_dir"] = "cache";
    raw["annotations_dir"] = "ann";
    raw["out_dir"] = "report";
    raw["rubric_overrides"] = {{"tutor_tone", {1}}};
    raw["baseline_tutor"] = "alpha";
    raw["min_undesired_n"] = 7;
    raw["likert_threshold"] = 3;
    raw["parallelism"] = 8;
    raw["seed"] = 1234;
    raw["synth"] = {{"n_students", 3}, {"beta", {{"rel_score", 1.5}, {"intercept", -0.5}}}};

    const pipeline::RunConfig config = pipeline::parse_config(raw);
    CHECK(config.submissions == "s.jsonl");
    CHECK(config.ratings == "r.jsonl");
    CHECK(config.backend.kind == "remote");
    CHECK(config.backend.remote.endpoint == "http://judge.local/v1/chat");
    CHECK(config.backend.remote.model == "judge-large");
    CHECK(config.backend.remote.api_key_env == "JUDGE_KEY");
    CHECK(config.backend.remote.temperature == doctest::Approx(0.25));
    CHECK(config.backend.remote.max_retries == 5);
    CHECK(config.backend.remote.initial_backoff_ms == 10);
    CHECK(config.backend.remote.timeout_seconds == 30);
    CHECK(config.rubric.desired_by_dimension().at("tutor_tone") == std::set<int>{1});
    CHECK(config.rubric.desired_by_dimension().at("coherence") == std::set<int>{1});
    CHECK(config.baseline_tutor == "alpha");
    CHECK(config.min_undesired_n == 7);
    CHECK(config.likert_threshold == 3);
    CHECK(config.parallelism == 8);
    CHECK(config.seed == 1234);
    CHECK(config.synth.n_students == 3);
    CHECK(config.synth.beta.rel == doctest::Approx(1.5));
    CHECK(config.synth.beta.intercept == doctest::Approx(-0.5));
}

TEST_CASE("unknown keys are rejected at every level") {
    expect_config_error({{"surprise", 1}}, "unknown key 'surprise' in config");
    expect_config_error({{"backend", {{"token", "x"}}}}, "unknown key 'token' in backend");
    expect_config_error({{"synth", {{"n_tutors", 2}}}}, "unknown key 'n_tutors' in synth");
    expect_config_error({{"synth", {{"beta", {{"banana", 1.0}}}}}},
                        "unknown key 'banana' in synth.beta");
    expect_config_error(
        {{"synth", {{"tutors", {{{"tutor_id", "t"}, {"style", "kind"}}}}}}},
        "unknown key 'style' in synth.tutors[0]");
}

TEST_CASE("config values are type and range checked") {
    expect_config_error(json::array(), "config root must be a JSON object");
    expect_config_error({{"submissions", 7}}, "submissions must be a string");
    expect_config_error({{"backend", "fixture"}}, "backend must be an object");
    expect_config_error({{"backend", {{"kind", "llm"}}}},
                        "backend.kind must be 'fixture' or 'remote', got 'llm'");
    expect_config_error({{"backend", {{"temperature", "hot"}}}},
                        "backend.temperature must be a number");
    expect_config_error({{"backend", {{"api_key_env", ""}}}},
                        "backend.api_key_env must not be empty");
    expect_config_error({{"backend", {{"max_retries", -1}}}}, "backend.max_retries must be >= 0");
    expect_config_error({{"backend", {{"timeout_seconds", 0}}}},
                        "backend.timeout_seconds must be > 0");
    expect_config_error({{"rubric_overrides", 3}}, "rubric_overrides must be an object");
    expect_config_error({{"rubric_overrides", {{"tutor_tone", json::array()}}}},
                        "rubric_overrides.tutor_tone must be a non-empty array of labels");
    expect_config_error({{"rubric_overrides", {{"tutor_tone", {"high"}}}}},
                        "rubric_overrides.tutor_tone must be an integer");
    expect_config_error({{"likert_threshold", 6}}, "likert_threshold must be in 1..5");
    expect_config_error({{"likert_threshold", 2.5}}, "likert_threshold must be an integer");
    expect_config_error({{"parallelism", 0}}, "parallelism must be >= 1");
    expect_config_error({{"min_undesired_n", -3}},
                        "min_undesired_n must be a non-negative integer");
    expect_config_error({{"seed", -1}}, "seed must be a non-negative integer");
}

TEST_CASE("rubric override labels outside 1..3 are rejected with context") {
    expect_config_error({{"rubric_overrides", {{"tutor_tone", {0}}}}}, "rubric_overrides:");
}

TEST_CASE("the synth block is validated when the config loads") {
    json raw = {{"synth", {{"tutors", {{{"tutor_id", "t"}, {"rel_prob", 1.5}}}}}}};
    CHECK_THROWS_AS((void)pipeline::parse_config(raw), ConfigError);
    json ghost = {{"synth", {{"baseline_tutor_id", "ghost"}}}};
    try {
        pipeline::parse_config(ghost);
        FAIL("expected a config error about the baseline id");
    } catch (const ConfigError& e) {
        CHECK_MESSAGE(std::string(e.what()).find("ghost") != std::string::npos, e.what());
    }
}

TEST_CASE("load_config reports missing or malformed files") {
    TempDir dir("pipeline-loadcfg");
    CHECK_THROWS_WITH_AS((void)pipeline::load_config(dir / "absent.json"),
                         doctest::Contains("config file not found"), ConfigError);
    const fs::path bad = dir / "bad.json";
    util::write_file(bad, "{not json");
    CHECK_THROWS_WITH_AS((void)pipeline::load_config(bad),
                         doctest::Contains("is not valid JSON"), ConfigError);
}

TEST_CASE("annotate targets parse and reject unknown values") {
    CHECK(pipeline::parse_annotate_target("pedagogy") == pipeline::AnnotateTarget::pedagogy);
    CHECK(pipeline::parse_annotate_target("engagement") == pipeline::AnnotateTarget::engagement);
    CHECK(pipeline::parse_annotate_target("both") == pipeline::AnnotateTarget::both);
    CHECK_THROWS_WITH_AS((void)pipeline::parse_annotate_target("all"),
                         "annotate target must be pedagogy, engagement or both; got 'all'",
                         ConfigError);
}

TEST_CASE("exception types map onto the exit-code contract") {
    CHECK(pipeline::exit_code_for(ConfigError("x")) == 2);
    CHECK(pipeline::exit_code_for(ValidationError("x")) == 2);
    CHECK(pipeline::exit_code_for(BackendError("x")) == 3);
    CHECK(pipeline::exit_code_for(StateError("x")) == 4);
    CHECK(pipeline::exit_code_for(AnnotationError("x")) == 4);
    CHECK(pipeline::exit_code_for(StatError("x")) == 4);
    CHECK(pipeline::exit_code_for(std::runtime_error("x")) == 4);
}

TEST_CASE("run_command prints the failure and returns its exit code") {
    std::ostringstream err;
    const int code = pipeline::run_command(
        []() -> int { throw ConfigError("bad knob"); }, err);
    CHECK(code == 2);
    CHECK(err.str() == "error: bad knob\n");

    std::ostringstream quiet;
    CHECK(pipeline::run_command([]() -> int { return 0; }, quiet) == 0);
    CHECK(quiet.str().empty());
}

// ---------------------------------------------------------------------------
// Commands against the hand-written corpus
// ---------------------------------------------------------------------------

TEST_CASE("validate summarizes the corpus and writes a summary file") {
    TempDir dir("pipeline-validate");
    json raw = fixture_config(dir);
    raw["ratings"] = (kFixtures / "ratings.jsonl").string();
    const pipeline::RunConfig config = pipeline::parse_config(raw);

    std::ostringstream log;
    CHECK(pipeline::cmd_validate(config, log) == 0);
    const std::string text = log.str();
    CHECK(text.find("submissions: 12 in 5 streams") != std::string::npos);
    CHECK(text.find("feedback: 7 read, 7 linked") != std::string::npos);
    CHECK(text.find("ratings: 3 read, 3 linked, 0 dropped") != std::string::npos);
    CHECK(text.find("engagement pairs: 4") != std::string::npos);
    CHECK(text.find("tutors: alpha beta") != std::string::npos);
    CHECK(text.find("corpus OK") != std::string::npos);

    const json summary = read_summary(config.out_dir);
    CHECK(summary.at("command") == "validate");
    CHECK(summary.at("counts").at("submissions") == 12);
    CHECK(summary.at("counts").at("streams") == 5);
    CHECK(summary.at("counts").at("engagement_pairs") == 4);
    CHECK(summary.at("tutors") == json::array({"alpha", "beta"}));
    CHECK(summary.at("warnings").empty());
}

TEST_CASE("commands demand their input paths up front") {
    TempDir dir("pipeline-inputs");
    std::ostringstream log;

    pipeline::RunConfig no_subs;
    no_subs.out_dir = (dir / "out").string();
    CHECK_THROWS_WITH_AS(pipeline::cmd_validate(no_subs, log),
                         "config key 'submissions' is required for this command", ConfigError);

    pipeline::RunConfig missing = no_subs;
    missing.submissions = (dir / "nope.jsonl").string();
    missing.feedback = (kFixtures / "feedback.jsonl").string();
    CHECK_THROWS_WITH_AS(pipeline::cmd_validate(missing, log),
                         doctest::Contains("input file not found"), ConfigError);
}

TEST_CASE("annotate runs the judge once and then replays from cache") {
    TempDir dir("pipeline-annotate");
    const pipeline::RunConfig config = pipeline::parse_config(fixture_config(dir));

    std::ostringstream first;
    CHECK(pipeline::cmd_annotate(config, pipeline::AnnotateTarget::both, first) == 0);
    CHECK(first.str().find("pedagogy: 7/7 feedback messages annotated") != std::string::npos);
    CHECK(first.str().find("engagement: 4/4 pairs annotated") != std::string::npos);
    CHECK(first.str().find("cache hits: 0, misses: 12, backend requests: 12, reprompts: 1") !=
          std::string::npos);

    const fs::path annotations = config.annotations_path();
    CHECK(fs::exists(annotations / "pedagogy.jsonl"));
    CHECK(fs::exists(annotations / "engagement.jsonl"));
    const auto count_lines = [](const fs::path& p) {
        const std::string text = slurp(p);
        return std::count(text.begin(), text.end(), '\n');
    };
    CHECK(count_lines(annotations / "pedagogy.jsonl") == 7);
    CHECK(count_lines(annotations / "engagement.jsonl") == 4);

    const json summary = read_summary(config.out_dir);
    CHECK(summary.at("command") == "annotate");
    CHECK(summary.at("pedagogy").at("annotated") == 7);
    CHECK(summary.at("engagement").at("items") == 4);
    CHECK(summary.at("stats").at("reprompts") == 1);
    CHECK(summary.at("warnings").empty());

    // Second run with a fresh annotator: everything, including the cached
    // unparseable first reply and its reprompt, comes from the reply cache.
    std::ostringstream second;
    CHECK(pipeline::cmd_annotate(config, pipeline::AnnotateTarget::both, second) == 0);
    CHECK(second.str().find("cache hits: 12, misses: 0, backend requests: 0, reprompts: 1") !=
          std::string::npos);
}

TEST_CASE("fixture annotate demands a transcript that exists") {
    TempDir dir("pipeline-transcript");
    std::ostringstream log;

    json raw = fixture_config(dir);
    raw["backend"] = {{"kind", "fixture"}};
    CHECK_THROWS_WITH_AS(
        pipeline::cmd_annotate(pipeline::parse_config(raw), pipeline::AnnotateTarget::both, log),
        "fixture backend requires backend.transcript", ConfigError);

    raw["backend"] = {{"kind", "fixture"}, {"transcript", (dir / "gone.jsonl").string()}};
    CHECK_THROWS_WITH_AS(
        pipeline::cmd_annotate(pipeline::parse_config(raw), pipeline::AnnotateTarget::both, log),
        doctest::Contains("fixture transcript not found"), ConfigError);
}

TEST_CASE("evaluate before annotate is a state error with a pointer to the fix") {
    TempDir dir("pipeline-early-eval");
    const pipeline::RunConfig config = pipeline::parse_config(fixture_config(dir));
    std::ostringstream log;
    try {
        pipeline::cmd_evaluate(config, log);
        FAIL("expected a StateError");
    } catch (const StateError& e) {
        const std::string what = e.what();
        CHECK(what.find("missing annotations under '") != std::string::npos);
        CHECK(what.find("': run the annotate command first") != std::string::npos);
    }
}

TEST_CASE("evaluate writes the complete report for the hand corpus") {
    TempDir dir("pipeline-evaluate");
    const pipeline::RunConfig config = pipeline::parse_config(fixture_config(dir));
    std::ostringstream log;
    REQUIRE(pipeline::cmd_annotate(config, pipeline::AnnotateTarget::both, log) == 0);
    REQUIRE(pipeline::cmd_evaluate(config, log) == 0);
    CHECK(log.str().find("report written to ") != std::string::npos);

    const fs::path out = config.out_dir;
    for (const char* leaf : {"tables/groups.csv", "tables/damr.md", "tables/damr.csv",
                             "tables/engagement.md", "tables/engagement.csv", "tables/delta.csv",
                             "tables/splits.csv", "tables/split_scores.csv",
                             "tables/stat_tests.csv", "tables/regression.md", "figures/delta.svg",
                             "summary.json"}) {
        CHECK_MESSAGE(fs::exists(out / leaf), leaf);
    }

    const std::string damr = slurp(out / "tables" / "damr.md");
    for (const auto& name : dimension_names()) {
        CHECK_MESSAGE(damr.find("| " + std::string(name) + " |") != std::string::npos, name);
    }

    // No ratings file in this config, so the models are skipped outright.
    CHECK(slurp(out / "tables" / "regression.md") ==
          "# Helpfulness models\n\nskipped: no ratings\n");

    const json summary = read_summary(out);
    CHECK(summary.at("tool_version") == "tutoreval 0.1.0");
    CHECK(summary.at("payloads").at("damr").size() == 8);
    CHECK(summary.at("payloads").at("counts").at("pedagogy_annotations") == 7);
    CHECK(summary.at("payloads").at("counts").at("engagement_annotations") == 4);
    CHECK(summary.at("payloads").at("regression").at("skipped") == "no ratings");
    CHECK(summary.at("corpus_digests").contains("submissions"));
    CHECK_FALSE(summary.at("corpus_digests").contains("ratings"));

    const auto warnings = summary.at("warnings").get<std::vector<std::string>>();
    auto has = [&warnings](const std::string& needle) {
        for (const auto& w : warnings) {
            if (w.find(needle) != std::string::npos) return true;
        }
        return false;
    };
    CHECK(has("regression skipped: no ratings"));
    CHECK(has("dimension 'mistake_identification' omitted from the delta chart"));
    CHECK(has("engagement comparison skipped for assignment '2' rel_score"));
    CHECK(has("split beta/revealing_answer (rel_score) not tested: undesired n=1 < 15"));
    // 32 split exclusions + 5 flat delta dimensions + 2 engagement skips + 1 regression skip
    CHECK(warnings.size() == 40);

    // The engagement table carries overall and assignment-1 rows only; the
    // beta cohort never reaches assignment 2.
    const std::string engagement = slurp(out / "tables" / "engagement.md");
    CHECK(engagement.find("| overall | rel_score |") != std::string::npos);
    CHECK(engagement.find("| 1 | rel_score |") != std::string::npos);
    CHECK(engagement.find("| 2 | rel_score |") == std::string::npos);
}

TEST_CASE("evaluate output does not depend on where the run lives") {
    TempDir dir_a("pipeline-det-a");
    TempDir dir_b("pipeline-det-b");
    std::ostringstream log;

    auto run = [&log](const TempDir& dir) {
        const pipeline::RunConfig config = pipeline::parse_config(fixture_config(dir));
        REQUIRE(pipeline::cmd_annotate(config, pipeline::AnnotateTarget::both, log) == 0);
        REQUIRE(pipeline::cmd_evaluate(config, log) == 0);
        return fs::path(config.out_dir);
    };
    const fs::path out_a = run(dir_a);
    const fs::path out_b = run(dir_b);

    for (const char* leaf : {"summary.json", "tables/damr.md", "tables/engagement.md",
                             "tables/stat_tests.csv", "figures/delta.svg"}) {
        CHECK_MESSAGE(slurp(out_a / leaf) == slurp(out_b / leaf), leaf);
    }
}

TEST_CASE("a generated corpus flows through annotate and evaluate with ratings") {
    TempDir dir("pipeline-synth-chain");
    json synth_raw = {{"out_dir", (dir / "corpus").string()},
                      {"seed", 4242},
                      {"synth", {{"n_students", 8}}}};
    std::ostringstream log;
    REQUIRE(pipeline::cmd_synth(pipeline::parse_config(synth_raw), log) == 0);
    const fs::path corpus = dir / "corpus";
    for (const char* leaf : {"submissions.jsonl", "feedback.jsonl", "ratings.jsonl",
                             "judge_transcript.jsonl", "ground_truth.json"}) {
        CHECK_MESSAGE(fs::exists(corpus / leaf), leaf);
    }
    const json synth_summary = read_summary(corpus);
    CHECK(synth_summary.at("command") == "synth");
    CHECK(synth_summary.at("seed") == 4242);
    CHECK(synth_summary.at("counts").at("streams") == 8 * 2 * 3 * 2);

    json eval_raw;
    eval_raw["submissions"] = (corpus / "submissions.jsonl").string();
    eval_raw["feedback"] = (corpus / "feedback.jsonl").string();
    eval_raw["ratings"] = (corpus / "ratings.jsonl").string();
    eval_raw["backend"] = {{"kind", "fixture"},
                           {"transcript", (corpus / "judge_transcript.jsonl").string()}};
    eval_raw["out_dir"] = (dir / "report").string();
    eval_raw["baseline_tutor"] = "baseline";
    eval_raw["parallelism"] = 4;
    const pipeline::RunConfig config = pipeline::parse_config(eval_raw);

    REQUIRE(pipeline::cmd_annotate(config, pipeline::AnnotateTarget::both, log) == 0);
    REQUIRE(pipeline::cmd_evaluate(config, log) == 0);

    const fs::path out = config.out_dir;
    const std::string regression = slurp(out / "tables" / "regression.md");
    CHECK(regression.find("skipped") == std::string::npos);
    CHECK(regression.find("| rel_score |") != std::string::npos);

    const json summary = read_summary(out);
    const json& models = summary.at("payloads").at("regression");
    REQUIRE_FALSE(models.at("pedagogy_only").is_null());
    REQUIRE_FALSE(models.at("combined").is_null());
    CHECK(models.at("combined").at("converged") == true);
    CHECK(models.at("rows").at("n_ratings").get<int>() > 100);
    CHECK(summary.at("payloads").at("counts").at("ratings_linked") ==
          models.at("rows").at("n_ratings"));
}

TEST_CASE("agreement command reports perfect self agreement") {
    TempDir dir("pipeline-agreement");
    const pipeline::RunConfig config = pipeline::parse_config(fixture_config(dir));
    std::ostringstream log;
    REQUIRE(pipeline::cmd_annotate(config, pipeline::AnnotateTarget::pedagogy, log) == 0);
    const fs::path pedagogy = config.annotations_path() / "pedagogy.jsonl";

    std::ostringstream agreement_log;
    CHECK(pipeline::cmd_agreement(config, pedagogy, pedagogy, agreement_log) == 0);
    CHECK(agreement_log.str().find("shared items: 7") != std::string::npos);
    CHECK(agreement_log.str().find("macro kappa: 1.0000") != std::string::npos);

    const json summary = read_summary(config.out_dir);
    CHECK(summary.at("command") == "agreement");
    CHECK(summary.at("shared_items") == 7);
    CHECK(summary.at("macro_kappa") == doctest::Approx(1.0));

    CHECK_THROWS_WITH_AS(
        pipeline::cmd_agreement(config, dir / "absent.jsonl", pedagogy, agreement_log),
        doctest::Contains("annotation file not found"), ConfigError);
}

// ---------------------------------------------------------------------------
// The installed binary, end to end
// ---------------------------------------------------------------------------

TEST_CASE("cli surfaces help and argument errors") {
    TempDir dir("cli-args");
    CHECK(run_cli("--help", dir).code == 0);
    const CliResult help = run_cli("--help", dir);
    CHECK(help.output.find("validate") != std::string::npos);
    CHECK(help.output.find("annotate") != std::string::npos);

    CHECK(run_cli("", dir).code == 2);             // no subcommand, missing --config
    CHECK(run_cli("validate", dir).code == 2);     // missing --config
    const fs::path cfg = write_config(dir, fixture_config(dir));
    CHECK(run_cli("--config " + quoted(cfg) + " --backend carrier validate", dir).code == 2);
    CHECK(run_cli("--config " + quoted(cfg) + " --parallelism 0 validate", dir).code == 2);
    CHECK(run_cli("--config " + quoted(cfg) + " annotate --which all", dir).code == 2);
}

TEST_CASE("cli validate accepts the fixture corpus and rejects a broken one") {
    TempDir dir("cli-validate");
    const fs::path cfg = write_config(dir, fixture_config(dir));
    const CliResult ok = run_cli("--config " + quoted(cfg) + " validate", dir);
    CHECK(ok.code == 0);
    CHECK(ok.output.find("corpus OK") != std::string::npos);

    // Same submissions, but feedback pointing at a submission that is not there.
    const fs::path bad_feedback = dir / "broken_feedback.jsonl";
    util::write_file(bad_feedback,
                     R"({"feedback_id":"fb-x","submission_id":"missing-0","text":"Fix it."})"
                     "\n");
    json broken = fixture_config(dir);
    broken["feedback"] = bad_feedback.string();
    const fs::path broken_cfg = write_config(dir, broken, "broken.json");
    const CliResult fail = run_cli("--config " + quoted(broken_cfg) + " validate", dir);
    CHECK(fail.code == 2);
    CHECK(fail.output.find("error: ") != std::string::npos);
    CHECK(fail.output.find("feedback references passed or missing submissions") !=
          std::string::npos);
}

TEST_CASE("cli walks the annotate-evaluate path and caches judge replies") {
    TempDir dir("cli-pipeline");
    const fs::path cfg = write_config(dir, fixture_config(dir));

    const CliResult early = run_cli("--config " + quoted(cfg) + " evaluate", dir);
    CHECK(early.code == 4);
    CHECK(early.output.find("run the annotate command first") != std::string::npos);

    const CliResult annotate = run_cli("--config " + quoted(cfg) + " annotate", dir);
    CHECK(annotate.code == 0);
    CHECK(annotate.output.find("pedagogy: 7/7") != std::string::npos);

    const CliResult again = run_cli("--config " + quoted(cfg) + " annotate", dir);
    CHECK(again.code == 0);
    CHECK(again.output.find("cache hits: 12, misses: 0, backend requests: 0") !=
          std::string::npos);

    const CliResult evaluate = run_cli("--config " + quoted(cfg) + " evaluate", dir);
    CHECK(evaluate.code == 0);
    CHECK(fs::exists(dir / "out" / "summary.json"));
    CHECK(fs::exists(dir / "out" / "figures" / "delta.svg"));

    const fs::path pedagogy = dir / "out" / "annotations" / "pedagogy.jsonl";
    const CliResult agreement = run_cli("--config " + quoted(cfg) + " agreement " +
                                            quoted(pedagogy) + " " + quoted(pedagogy),
                                        dir);
    CHECK(agreement.code == 0);
    CHECK(agreement.output.find("macro kappa: 1.0000") != std::string::npos);
}

TEST_CASE("cli annotate resumes after a truncated transcript run") {
    TempDir dir("cli-resume");

    // A transcript that knows the pedagogy items but none of the engagement ones.
    std::string partial;
    std::istringstream full(slurp(kFixtures / "judge_transcript.jsonl"));
    for (std::string line; std::getline(full, line);) {
        if (line.find("\"pedagogy:") != std::string::npos) partial += line + "\n";
    }
    const fs::path partial_path = dir / "partial_transcript.jsonl";
    util::write_file(partial_path, partial);

    json raw = fixture_config(dir);
    raw["backend"]["transcript"] = partial_path.string();
    const fs::path partial_cfg = write_config(dir, raw, "partial.json");
    const CliResult failed = run_cli("--config " + quoted(partial_cfg) + " annotate", dir);
    CHECK(failed.code == 3);
    CHECK(failed.output.find("fixture backend has no scripted reply") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "out" / "annotations" / "engagement.jsonl"));

    // Same cache, full transcript: the pedagogy replies replay without a backend.
    const fs::path full_cfg = write_config(dir, fixture_config(dir), "full.json");
    const CliResult resumed = run_cli("--config " + quoted(full_cfg) + " annotate", dir);
    CHECK(resumed.code == 0);
    CHECK(resumed.output.find("cache hits: 8, misses: 4") != std::string::npos);

    TempDir clean("cli-resume-clean");
    const fs::path clean_cfg = write_config(clean, fixture_config(clean));
    REQUIRE(run_cli("--config " + quoted(clean_cfg) + " annotate", clean).code == 0);
    for (const char* leaf : {"pedagogy.jsonl", "engagement.jsonl"}) {
        CHECK(slurp(dir / "out" / "annotations" / leaf) ==
              slurp(clean / "out" / "annotations" / leaf));
    }
}

TEST_CASE("cli synth honors the seed override") {
    TempDir dir("cli-synth");
    json raw;
    raw["out_dir"] = (dir / "a").string();
    raw["synth"] = {{"n_students", 2}};
    const fs::path cfg = write_config(dir, raw);

    CHECK(run_cli("--config " + quoted(cfg) + " --seed 7 synth", dir).code == 0);
    CHECK(run_cli("--config " + quoted(cfg) + " --seed 7 --out-dir " + quoted(dir / "b") +
                      " synth",
                  dir)
              .code == 0);
    CHECK(run_cli("--config " + quoted(cfg) + " --seed 8 --out-dir " + quoted(dir / "c") +
                      " synth",
                  dir)
              .code == 0);
    CHECK(slurp(dir / "a" / "submissions.jsonl") == slurp(dir / "b" / "submissions.jsonl"));
    CHECK(slurp(dir / "a" / "submissions.jsonl") != slurp(dir / "c" / "submissions.jsonl"));
}
