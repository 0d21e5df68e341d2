#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <atomic>
#include <memory>
#include <set>

#include "rhetor/pipeline.hpp"
#include "test_support.hpp"

using namespace rhetor;

namespace {

struct CountingGenerator : AbstractGenerator {
  SyntheticAbstractGenerator inner;
  std::atomic<int> calls{0};

  std::string generate(const Persona& persona, const PaperItem& paper,
                       int min_words, int max_words, int attempt) override {
    ++calls;
    return inner.generate(persona, paper, min_words, max_words, attempt);
  }
  std::string id() const override { return "counting-synthetic"; }
};

std::vector<PaperItem> three_papers() {
  return {testsupport::make_paper("q1"), testsupport::make_paper("q2"),
          testsupport::make_paper("q3")};
}

std::vector<Persona> raw_panel() {
  return {testsupport::make_persona("ka"), testsupport::make_persona("kb"),
          testsupport::make_persona("kc")};
}

std::vector<Persona> calibrated_panel() {
  return {testsupport::make_persona("ka", -1.0),
          testsupport::make_persona("kb", 0.0),
          testsupport::make_persona("kc", 1.0)};
}

std::shared_ptr<JudgeGateway> deterministic_gateway(
    const std::map<std::string, double>& scores) {
  auto backend = std::make_shared<SimulatedJudgeBackend>(
      scores, JudgeNoise::Deterministic, 1);
  GatewayOptions options;
  options.rng_seed = 2;
  return std::make_shared<JudgeGateway>(backend, options);
}

std::vector<std::string> plan_keys(const std::vector<ComparisonSlot>& plan) {
  std::vector<std::string> keys;
  for (const auto& slot : plan) keys.push_back(slot.key());
  return keys;
}

}  // namespace

TEST_CASE("calibration plans cover every pair with distinct papers") {
  const auto plan = plan_calibration(three_papers(), raw_panel(), 2, 42);
  REQUIRE(plan.size() == 6);  // 3 pairs, 2 samples each

  std::map<std::string, std::set<std::string>> papers_by_pair;
  for (const auto& slot : plan) {
    REQUIRE(slot.item_a.persona_id.has_value());
    REQUIRE(slot.item_b.persona_id.has_value());
    CHECK(*slot.item_a.persona_id < *slot.item_b.persona_id);
    CHECK(slot.item_a.paper_id == slot.paper_id);
    papers_by_pair[*slot.item_a.persona_id + "|" + *slot.item_b.persona_id]
        .insert(slot.paper_id);
  }
  REQUIRE(papers_by_pair.size() == 3);
  for (const auto& [pair, papers] : papers_by_pair) {
    (void)pair;
    CHECK(papers.size() == 2);  // sampled without replacement
  }
}

TEST_CASE("calibration plans are a pure function of their inputs") {
  std::vector<PaperItem> papers;
  for (int i = 0; i < 10; ++i) {
    papers.push_back(testsupport::make_paper("q" + std::to_string(i)));
  }
  const auto first = plan_calibration(papers, raw_panel(), 3, 42);
  const auto second = plan_calibration(papers, raw_panel(), 3, 42);
  CHECK(plan_keys(first) == plan_keys(second));

  const auto reseeded = plan_calibration(papers, raw_panel(), 3, 43);
  CHECK(plan_keys(first) != plan_keys(reseeded));

  // panel order does not matter: ids are sorted inside
  auto shuffled = raw_panel();
  std::swap(shuffled[0], shuffled[2]);
  CHECK(plan_keys(plan_calibration(papers, shuffled, 3, 42)) ==
        plan_keys(first));
}

TEST_CASE("calibration plans clamp to the corpus size") {
  const std::vector<PaperItem> papers = {testsupport::make_paper("q1"),
                                         testsupport::make_paper("q2")};
  const auto plan = plan_calibration(papers, raw_panel(), 5, 42);
  CHECK(plan.size() == 6);  // 3 pairs, take = min(2, 5)

  CHECK(plan_calibration({}, raw_panel(), 5, 42).empty());
  CHECK_THROWS_AS(plan_calibration(papers, raw_panel(), 0, 42),
                  InvalidArgumentError);
}

TEST_CASE("scoring plans pit each original against the panel in order") {
  const std::vector<PaperItem> papers = {testsupport::make_paper("q1"),
                                         testsupport::make_paper("q2")};
  const auto plan = plan_scoring(papers, raw_panel());
  REQUIRE(plan.size() == 6);
  for (size_t i = 0; i < plan.size(); ++i) {
    CHECK(plan[i].paper_id == papers[i / 3].id);
    CHECK(plan[i].item_a.is_original());
    CHECK(*plan[i].item_b.persona_id == raw_panel()[i % 3].id);
  }
}

TEST_CASE("calibration run populates the store end to end") {
  testsupport::TempDir dir;
  CorpusStore store(dir.path());
  const auto papers = three_papers();
  auto panel = raw_panel();
  CountingGenerator generator;
  auto gateway =
      deterministic_gateway({{"ka", -1.0}, {"kb", 0.0}, {"kc", 1.0}});
  testsupport::CountingJudge judge(*gateway);

  CalibrationRunOptions options;
  options.samples_per_pair = 2;
  options.concurrency = 2;
  options.fit.smoothing = 0.01;

  std::set<std::string> stages;
  const CalibrationRunOutcome outcome = run_calibration(
      store, papers, panel, generator, judge, options,
      [&stages](const ProgressEvent& e) { stages.insert(e.stage); });

  CHECK(outcome.slots_planned == 6);
  CHECK(outcome.slots_already_done == 0);
  CHECK(outcome.judged == 6);
  CHECK(outcome.judge_failures.empty());
  CHECK(outcome.generation.failures.empty());
  CHECK(outcome.generation.generated > 0);
  CHECK(stages.count("generate") == 1);
  CHECK(stages.count("judge") == 1);
  CHECK(stages.count("fit") == 1);

  // the noiseless judge orders the panel correctly
  CHECK(outcome.fit.scores.at("ka") < outcome.fit.scores.at("kb"));
  CHECK(outcome.fit.scores.at("kb") < outcome.fit.scores.at("kc"));

  CHECK(store.read_papers().size() == 3);
  CHECK(static_cast<int>(store.read_counterfactuals().size()) ==
        outcome.generation.generated);
  CHECK(store.read_comparisons().size() == 6);
  REQUIRE(store.has_fit());
  REQUIRE(store.has_personas());
  const auto stored_panel = store.read_personas();
  REQUIRE(stored_panel.size() == 3);
  for (const auto& p : stored_panel) {
    REQUIRE(p.calibrated_score.has_value());
    CHECK(*p.calibrated_score ==
          doctest::Approx(outcome.fit.scores.at(p.id)));
  }

  // a rerun touches neither the generator nor the judge
  CountingGenerator rerun_generator;
  testsupport::CountingJudge rerun_judge(*gateway);
  const CalibrationRunOutcome again =
      run_calibration(store, papers, panel, rerun_generator, rerun_judge, options);
  CHECK(again.slots_planned == 6);
  CHECK(again.slots_already_done == 6);
  CHECK(again.judged == 0);
  CHECK(again.generation.generated == 0);
  CHECK(rerun_generator.calls == 0);
  CHECK(rerun_judge.calls() == 0);
  CHECK(store.read_comparisons().size() == 6);
  CHECK(again.fit.scores.at("kc") ==
        doctest::Approx(outcome.fit.scores.at("kc")));
}

TEST_CASE("an interrupted calibration resumes where it stopped") {
  testsupport::TempDir dir;
  CorpusStore store(dir.path());
  const auto papers = three_papers();
  auto panel = raw_panel();
  SyntheticAbstractGenerator generator;
  auto gateway =
      deterministic_gateway({{"ka", -1.0}, {"kb", 0.0}, {"kc", 1.0}});

  CalibrationRunOptions options;
  options.samples_per_pair = 2;
  options.concurrency = 1;  // keep plan order so the cutoff is predictable
  options.fit.smoothing = 0.01;

  testsupport::FlakyJudge flaky(*gateway, 3);
  const CalibrationRunOutcome partial =
      run_calibration(store, papers, panel, generator, flaky, options);
  CHECK(partial.judged == 3);
  CHECK(partial.judge_failures.size() == 3);
  CHECK(store.read_comparisons().size() == 3);

  const CalibrationRunOutcome resumed =
      run_calibration(store, papers, panel, generator, *gateway, options);
  CHECK(resumed.slots_already_done == 3);
  CHECK(resumed.judged == 3);
  CHECK(resumed.judge_failures.empty());
  CHECK(store.read_comparisons().size() == 6);
  CHECK(resumed.fit.scores.at("ka") < resumed.fit.scores.at("kc"));
}

TEST_CASE("calibration ignores unrelated stored records") {
  testsupport::TempDir dir;
  CorpusStore store(dir.path());

  // a leftover record about a persona outside this panel
  ComparisonRecord foreign;
  foreign.item_a = ItemRef::persona("px", "zz");
  foreign.item_b = ItemRef::persona("px", "ka");
  foreign.winner = Winner::A;
  foreign.judge_id = "old-run";
  foreign.timestamp = "2024-01-01T00:00:00Z";
  store.append_comparison(foreign);

  SyntheticAbstractGenerator generator;
  auto gateway =
      deterministic_gateway({{"ka", -1.0}, {"kb", 0.0}, {"kc", 1.0}});
  CalibrationRunOptions options;
  options.samples_per_pair = 2;
  options.fit.smoothing = 0.01;

  const CalibrationRunOutcome outcome = run_calibration(
      store, three_papers(), raw_panel(), generator, *gateway, options);
  CHECK(outcome.fit.scores.size() == 3);
  CHECK(outcome.fit.scores.count("zz") == 0);
}

TEST_CASE("calibration run input validation") {
  testsupport::TempDir dir;
  CorpusStore store(dir.path());
  SyntheticAbstractGenerator generator;
  auto gateway = deterministic_gateway({{"ka", 0.0}});
  CalibrationRunOptions options;

  CHECK_THROWS_AS(run_calibration(store, three_papers(),
                                  {testsupport::make_persona("ka")}, generator,
                                  *gateway, options),
                  InvalidArgumentError);
  CHECK_THROWS_AS(
      run_calibration(store, {}, raw_panel(), generator, *gateway, options),
      InvalidArgumentError);
}

TEST_CASE("batch scoring judges, fits, and persists per-paper scores") {
  testsupport::TempDir dir;
  CorpusStore store(dir.path());
  const std::vector<PaperItem> papers = {testsupport::make_paper("q1"),
                                         testsupport::make_paper("q2")};
  const auto panel = calibrated_panel();
  CountingGenerator generator;
  auto gateway = deterministic_gateway(
      {{"q1", 0.5}, {"q2", -2.0}, {"ka", -1.0}, {"kb", 0.0}, {"kc", 1.0}});
  testsupport::CountingJudge judge(*gateway);

  ScoringRunOptions options;
  options.concurrency = 2;

  const ScoringRunOutcome outcome =
      run_scoring(store, papers, panel, generator, judge, options);
  REQUIRE(outcome.scores.size() == 2);
  CHECK(outcome.scores[0].paper_id == "q1");
  CHECK(outcome.scores[1].paper_id == "q2");
  CHECK(outcome.scores[0].mode == "map");
  CHECK(outcome.scores[0].comparisons.size() == 3);
  CHECK(outcome.judged == 6);
  CHECK(outcome.paper_failures.empty());
  CHECK(outcome.generation.generated == 6);
  // q1 truly outscores q2, and the noiseless evidence shows it
  CHECK(outcome.scores[0].score > outcome.scores[1].score);

  CHECK(store.read_scores().size() == 2);
  CHECK(store.read_comparisons().size() == 6);
  CHECK(store.read_counterfactuals().size() == 6);

  // scoring the same papers again reuses every stored judgment
  CountingGenerator rerun_generator;
  testsupport::CountingJudge rerun_judge(*gateway);
  const ScoringRunOutcome again =
      run_scoring(store, papers, panel, rerun_generator, rerun_judge, options);
  CHECK(again.judged == 0);
  CHECK(rerun_generator.calls == 0);
  CHECK(rerun_judge.calls() == 0);
  REQUIRE(again.scores.size() == 2);
  CHECK(again.scores[0].score == doctest::Approx(outcome.scores[0].score));
  CHECK(again.scores[1].score == doctest::Approx(outcome.scores[1].score));
  // identical rows share a content id, so the rerun appends nothing
  CHECK(store.read_scores().size() == 2);
}

TEST_CASE("batch scoring isolates a paper whose judgments all failed") {
  testsupport::TempDir dir;
  CorpusStore store(dir.path());
  const std::vector<PaperItem> papers = {testsupport::make_paper("q1"),
                                         testsupport::make_paper("q2")};
  const auto panel = calibrated_panel();
  SyntheticAbstractGenerator generator;
  auto gateway = deterministic_gateway(
      {{"q1", 0.5}, {"q2", -2.0}, {"ka", -1.0}, {"kb", 0.0}, {"kc", 1.0}});

  ScoringRunOptions options;
  options.concurrency = 1;

  testsupport::FlakyJudge flaky(*gateway, 3);
  const ScoringRunOutcome partial =
      run_scoring(store, papers, panel, generator, flaky, options);
  REQUIRE(partial.scores.size() == 1);
  CHECK(partial.scores[0].paper_id == "q1");
  REQUIRE(partial.paper_failures.size() == 1);
  CHECK(partial.paper_failures[0].find("q2") != std::string::npos);

  const ScoringRunOutcome resumed =
      run_scoring(store, papers, panel, generator, *gateway, options);
  CHECK(resumed.judged == 3);  // only q2's missing slots
  CHECK(resumed.scores.size() == 2);
  CHECK(resumed.paper_failures.empty());
}

TEST_CASE("scoring run validation") {
  testsupport::TempDir dir;
  CorpusStore store(dir.path());
  SyntheticAbstractGenerator generator;
  auto gateway = deterministic_gateway({{"ka", 0.0}});
  const std::vector<PaperItem> papers = {testsupport::make_paper("q1")};

  ScoringRunOptions bad_mode;
  bad_mode.mode = "bayes";
  CHECK_THROWS_AS(run_scoring(store, papers, calibrated_panel(), generator,
                              *gateway, bad_mode),
                  ConfigError);

  ScoringRunOptions options;
  CHECK_THROWS_AS(
      run_scoring(store, papers, {}, generator, *gateway, options),
      InvalidArgumentError);
  CHECK_THROWS_AS(run_scoring(store, papers, raw_panel(), generator, *gateway,
                              options),
                  DataIntegrityError);

  // an empty paper list is a no-op, not an error
  const ScoringRunOutcome empty = run_scoring(store, {}, calibrated_panel(),
                                              generator, *gateway, options);
  CHECK(empty.scores.empty());
  CHECK(empty.judged == 0);
  CHECK(store.read_scores().empty());
}

TEST_CASE("adaptive scoring replays stored batch judgments") {
  testsupport::TempDir dir;
  CorpusStore store(dir.path());
  const std::vector<PaperItem> papers = {testsupport::make_paper("q1"),
                                         testsupport::make_paper("q2")};
  const auto panel = calibrated_panel();
  SyntheticAbstractGenerator generator;
  auto gateway = deterministic_gateway(
      {{"q1", 0.5}, {"q2", -2.0}, {"ka", -1.0}, {"kb", 0.0}, {"kc", 1.0}});

  ScoringRunOptions batch;
  run_scoring(store, papers, panel, generator, *gateway, batch);
  REQUIRE(store.read_comparisons().size() == 6);

  CountingGenerator cold_generator;
  testsupport::CountingJudge judge(*gateway);
  ScoringRunOptions adaptive;
  adaptive.mode = "adaptive";
  adaptive.adaptive_stop_std = 0.5;
  adaptive.concurrency = 2;

  const ScoringRunOutcome outcome =
      run_scoring(store, papers, panel, cold_generator, judge, adaptive);
  REQUIRE(outcome.scores.size() == 2);
  CHECK(outcome.judged == 0);
  CHECK(judge.calls() == 0);
  CHECK(cold_generator.calls == 0);
  for (const auto& s : outcome.scores) {
    CHECK(s.mode == "adaptive");
    CHECK(s.comparisons.size() >= 1);
    CHECK(s.comparisons.size() <= 3);
  }
  CHECK(store.read_comparisons().size() == 6);  // nothing new judged
}

TEST_CASE("adaptive scoring on a cold store generates only what it asks") {
  testsupport::TempDir dir;
  CorpusStore store(dir.path());
  const std::vector<PaperItem> papers = {testsupport::make_paper("q1"),
                                         testsupport::make_paper("q2")};
  const auto panel = calibrated_panel();
  CountingGenerator generator;
  auto gateway = deterministic_gateway(
      {{"q1", 0.5}, {"q2", -2.0}, {"ka", -1.0}, {"kb", 0.0}, {"kc", 1.0}});

  ScoringRunOptions options;
  options.mode = "adaptive";
  options.adaptive_stop_std = 0.5;
  options.concurrency = 1;

  const ScoringRunOutcome outcome =
      run_scoring(store, papers, panel, generator, *gateway, options);
  REQUIRE(outcome.scores.size() == 2);
  CHECK(outcome.judged >= 2);  // at least the mandatory first per paper
  CHECK(outcome.judged <= 6);
  // one lazy generation per judged pair, never the full panel cross product
  CHECK(generator.calls == outcome.judged);
  CHECK(outcome.generation.generated == outcome.judged);
  CHECK(static_cast<long long>(store.read_comparisons().size()) ==
        outcome.judged);
  CHECK(static_cast<long long>(store.read_counterfactuals().size()) ==
        outcome.judged);
}

TEST_CASE("adaptive scoring isolates per-paper judge failures") {
  testsupport::TempDir dir;
  CorpusStore store(dir.path());
  const std::vector<PaperItem> papers = {testsupport::make_paper("q1"),
                                         testsupport::make_paper("q2")};
  const auto panel = calibrated_panel();
  SyntheticAbstractGenerator generator;
  auto gateway = deterministic_gateway(
      {{"q1", 0.5}, {"q2", -2.0}, {"ka", -1.0}, {"kb", 0.0}, {"kc", 1.0}});

  ScoringRunOptions options;
  options.mode = "adaptive";
  options.adaptive_stop_std = 10.0;  // one comparison satisfies each paper
  options.concurrency = 1;

  testsupport::FlakyJudge flaky(*gateway, 1);
  const ScoringRunOutcome outcome =
      run_scoring(store, papers, panel, generator, flaky, options);
  REQUIRE(outcome.scores.size() == 1);
  CHECK(outcome.scores[0].paper_id == "q1");
  CHECK(outcome.scores[0].comparisons.size() == 1);
  REQUIRE(outcome.paper_failures.size() == 1);
  CHECK(outcome.paper_failures[0].find("q2") != std::string::npos);
}
