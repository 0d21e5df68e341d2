#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "rhetor/analysis.hpp"
#include "test_support.hpp"

using namespace rhetor;

namespace {

ComparisonRecord original_versus(const std::string& paper,
                                 const std::string& persona, bool original_won,
                                 bool persona_presented_first = false) {
  ComparisonRecord r;
  if (persona_presented_first) {
    r.item_a = ItemRef::persona(paper, persona);
    r.item_b = ItemRef::original(paper);
    r.winner = original_won ? Winner::B : Winner::A;
  } else {
    r.item_a = ItemRef::original(paper);
    r.item_b = ItemRef::persona(paper, persona);
    r.winner = original_won ? Winner::A : Winner::B;
  }
  r.judge_id = "t";
  r.timestamp = "2025-01-01T00:00:00Z";
  return r;
}

}  // namespace

TEST_CASE("spearman endpoints") {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  CHECK(spearman(x, {10, 20, 30, 40, 50}) == doctest::Approx(1.0));
  CHECK(spearman(x, {5, 4, 3, 2, 1}) == doctest::Approx(-1.0));
  // rank-based: any monotone rescaling of an input changes nothing
  CHECK(spearman({2, 4, 6, 8, 10}, {3, 1, 4, 1.5, 9}) ==
        doctest::Approx(spearman(x, {3, 1, 4, 1.5, 9})));
}

TEST_CASE("spearman averages tied ranks") {
  // value frozen from an independent rank computation
  CHECK(spearman({1, 2, 2, 3}, {1, 2, 3, 4}) ==
        doctest::Approx(0.9486832980505138).epsilon(1e-12));
}

TEST_CASE("spearman input validation") {
  CHECK_THROWS_AS(spearman({1, 2, 3}, {1, 2}), InvalidArgumentError);
  CHECK_THROWS_AS(spearman({1, 2}, {1, 2}), InvalidArgumentError);
  CHECK_THROWS_AS(spearman({1, 1, 1}, {1, 2, 3}), InvalidArgumentError);
  CHECK_THROWS_AS(spearman({1, 2, 3}, {4, 4, 4}), InvalidArgumentError);
}

TEST_CASE("win rates tally persona wins per persona") {
  const std::vector<ComparisonRecord> records = {
      original_versus("p1", "k1", false),
      original_versus("p2", "k1", true),
      original_versus("p3", "k1", false, true),  // persona side swapped
      original_versus("p1", "k2", true),
  };
  const WinRateReport report = persona_win_rates(records, {"k1", "k2", "k3"});
  CHECK(report.total_records == 4);
  REQUIRE(report.by_persona.count("k1") == 1);
  CHECK(report.by_persona.at("k1").wins == 2);
  CHECK(report.by_persona.at("k1").comparisons == 3);
  CHECK(report.by_persona.at("k1").rate == doctest::Approx(2.0 / 3.0));
  CHECK(report.by_persona.at("k2").rate == doctest::Approx(0.0));
  CHECK(report.by_persona.at("k2").comparisons == 1);
  REQUIRE(report.personas_without_comparisons.size() == 1);
  CHECK(report.personas_without_comparisons[0] == "k3");
}

TEST_CASE("win rates list idle personas sorted") {
  const WinRateReport report =
      persona_win_rates({original_versus("p1", "k1", true)}, {"z", "m", "k1"});
  CHECK(report.personas_without_comparisons ==
        std::vector<std::string>{"m", "z"});
}

TEST_CASE("win rates reject records that are not original-vs-persona") {
  ComparisonRecord both_personas;
  both_personas.item_a = ItemRef::persona("p1", "k1");
  both_personas.item_b = ItemRef::persona("p1", "k2");
  both_personas.judge_id = "t";
  both_personas.timestamp = "2025-01-01T00:00:00Z";
  CHECK_THROWS_AS(persona_win_rates({both_personas}), DataIntegrityError);

  ComparisonRecord both_originals;
  both_originals.item_a = ItemRef::original("p1");
  both_originals.item_b = ItemRef::original("p1");
  both_originals.judge_id = "t";
  both_originals.timestamp = "2025-01-01T00:00:00Z";
  CHECK_THROWS_AS(persona_win_rates({both_originals}), DataIntegrityError);
}

TEST_CASE("lexicon files are lowercased and comment-stripped") {
  testsupport::TempDir dir;
  const auto path = dir.path() / "hype.txt";
  testsupport::write_file(path,
                          "# promotional vocabulary\n"
                          "Groundbreaking\n"
                          "NOVEL\n"
                          "\n"
                          "  unprecedented  \r\n");
  const auto lexicon = load_lexicon_file(path);
  CHECK(lexicon.size() == 3);
  CHECK(lexicon.count("groundbreaking") == 1);
  CHECK(lexicon.count("novel") == 1);
  CHECK(lexicon.count("unprecedented") == 1);

  CHECK_THROWS_AS(load_lexicon_file(dir.path() / "absent.txt"), ConfigError);
}

TEST_CASE("promotion score is the matched fraction of words") {
  const std::set<std::string> lexicon = {"groundbreaking", "novel"};
  CHECK(promotion_score("A groundbreaking and novel result.", lexicon) ==
        doctest::Approx(2.0 / 5.0));
  // case and edge punctuation do not block a match
  CHECK(promotion_score("Groundbreaking!", lexicon) == doctest::Approx(1.0));
  CHECK(promotion_score("plain words only", lexicon) == doctest::Approx(0.0));
  CHECK(promotion_score("anything at all", {}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(promotion_score("!!! ... ???", lexicon),
                  InvalidArgumentError);
  CHECK_THROWS_AS(promotion_score("", lexicon), InvalidArgumentError);
}

TEST_CASE("ungrouped score summary") {
  std::vector<ScoredItem> items;
  for (int i = 1; i <= 10; ++i) {
    items.push_back({"p" + std::to_string(i), static_cast<double>(i), 0.1, {}});
  }
  const auto summaries = score_summary(items, std::nullopt);
  REQUIRE(summaries.size() == 1);
  const GroupSummary& g = summaries[0];
  CHECK(g.group.empty());
  CHECK(g.count == 10);
  CHECK(g.mean == doctest::Approx(5.5));
  // value frozen from an independent variance computation
  CHECK(g.stddev == doctest::Approx(3.0276503540974917).epsilon(1e-12));
  const double half = 1.96 * g.stddev / std::sqrt(10.0);
  CHECK(g.ci95_low == doctest::Approx(5.5 - half));
  CHECK(g.ci95_high == doctest::Approx(5.5 + half));
  REQUIRE(g.decile_boundaries.size() == 9);
  for (int k = 1; k <= 9; ++k) {
    CHECK(g.decile_boundaries[k - 1] == doctest::Approx(k));
  }
}

TEST_CASE("grouped score summary orders groups by key") {
  std::vector<ScoredItem> items = {
      {"p1", 1.0, 0.0, {{"year", "2021"}}},
      {"p2", 3.0, 0.0, {{"year", "2021"}}},
      {"p3", 10.0, 0.0, {{"year", "2019"}}},
  };
  const auto summaries = score_summary(items, std::string("year"));
  REQUIRE(summaries.size() == 2);
  CHECK(summaries[0].group == "2019");
  CHECK(summaries[0].count == 1);
  CHECK(summaries[0].mean == doctest::Approx(10.0));
  CHECK(summaries[0].stddev == doctest::Approx(0.0));
  CHECK(summaries[1].group == "2021");
  CHECK(summaries[1].mean == doctest::Approx(2.0));

  CHECK_THROWS_AS(score_summary(items, std::string("venue")),
                  InvalidArgumentError);
  CHECK_THROWS_AS(score_summary({}, std::nullopt), InvalidArgumentError);
}

TEST_CASE("decile table splits a shuffled range evenly") {
  std::vector<double> scores;
  for (int i = 0; i < 100; ++i) scores.push_back(i);
  std::mt19937 rng(7);
  std::shuffle(scores.begin(), scores.end(), rng);
  std::vector<double> aux;
  for (double s : scores) aux.push_back(2.0 * s);

  const auto rows = decile_table(scores, &aux);
  REQUIRE(rows.size() == 10);
  for (int g = 0; g < 10; ++g) {
    CHECK(rows[g].group == g);
    CHECK(rows[g].count == 10);
    CHECK(rows[g].range_low == doctest::Approx(10.0 * g));
    CHECK(rows[g].range_high == doctest::Approx(10.0 * g + 9));
    CHECK(rows[g].mean_score == doctest::Approx(10.0 * g + 4.5));
    REQUIRE(rows[g].mean_aux.has_value());
    CHECK(*rows[g].mean_aux == doctest::Approx(2.0 * rows[g].mean_score));
  }
}

TEST_CASE("decile table handles sizes that do not divide evenly") {
  std::vector<double> scores;
  for (int i = 0; i < 25; ++i) scores.push_back(i);
  const auto rows = decile_table(scores);
  int total = 0;
  for (const auto& row : rows) {
    CHECK(row.count >= 2);
    CHECK_FALSE(row.mean_aux.has_value());
    total += row.count;
  }
  CHECK(total == 25);
}

TEST_CASE("decile table input validation") {
  std::vector<double> nine(9, 1.0);
  CHECK_THROWS_AS(decile_table(nine), InvalidArgumentError);
  std::vector<double> ten(10, 1.0);
  std::vector<double> aux(9, 1.0);
  CHECK_THROWS_AS(decile_table(ten, &aux), InvalidArgumentError);
}

TEST_CASE("scores export as tidy csv") {
  PaperItem paper = testsupport::make_paper("p1");
  paper.metadata = {{"year", "2020"}, {"subfield", "ml, theory"}};
  const PaperItem bare = testsupport::make_paper("p2");

  QueryScore s1;
  s1.paper_id = "p1";
  s1.score = 1.5;
  s1.stddev = 0.25;
  s1.mode = "map";
  s1.comparisons = {{"k1", true}, {"k2", false}, {"k3", true}};
  QueryScore s2;
  s2.paper_id = "p2";
  s2.score = -0.5;
  s2.stddev = 0.5;
  s2.mode = "map";

  const std::string csv = scores_to_csv({s1, s2}, {paper, bare});
  const std::string expected =
      "paper_id,score,std,year,subfield,wins,losses\n"
      "p1,1.5,0.25,2020,\"ml, theory\",2,1\n"
      "p2,-0.5,0.5,,,0,0\n";
  CHECK(csv == expected);
}

TEST_CASE("csv escaping doubles embedded quotes") {
  QueryScore s;
  s.paper_id = "p \"quoted\" one";
  s.score = 0.0;
  s.stddev = 0.0;
  s.mode = "map";
  const std::string csv = scores_to_csv({s}, {});
  CHECK(csv.find("\"p \"\"quoted\"\" one\",0,0,,,0,0") != std::string::npos);
}
