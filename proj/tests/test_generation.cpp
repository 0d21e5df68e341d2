#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <memory>

#include "rhetor/generation.hpp"
#include "test_support.hpp"

using namespace rhetor;

namespace {

struct ScriptedGenerator : AbstractGenerator {
  std::vector<std::string> texts;
  size_t next = 0;

  explicit ScriptedGenerator(std::vector<std::string> t) : texts(std::move(t)) {}

  std::string generate(const Persona&, const PaperItem&, int, int,
                       int) override {
    if (next >= texts.size()) {
      throw TransportExhaustedError("scripted generator ran dry");
    }
    return texts[next++];
  }
  std::string id() const override { return "scripted-generator"; }
};

struct FailingForPersona : AbstractGenerator {
  SyntheticAbstractGenerator inner;
  std::string bad_persona;

  explicit FailingForPersona(std::string bad) : bad_persona(std::move(bad)) {}

  std::string generate(const Persona& persona, const PaperItem& paper,
                       int min_words, int max_words, int attempt) override {
    if (persona.id == bad_persona) {
      throw GeneratorProtocolError("backend refused persona " + persona.id);
    }
    return inner.generate(persona, paper, min_words, max_words, attempt);
  }
  std::string id() const override { return "failing-generator"; }
};

PromptTemplate generation_template() {
  return {"gen_v1",
          "Methods and results:\n{mr_text}\n"
          "Write an abstract between {min_wc} and {max_wc} words."};
}

}  // namespace

TEST_CASE("synthetic generator hits the midpoint length exactly") {
  SyntheticAbstractGenerator gen;
  const Persona persona = testsupport::make_persona("k1");
  const PaperItem paper = testsupport::make_paper("p1");

  const std::string text = gen.generate(persona, paper, 45, 75, 1);
  CHECK(word_count(text) == 60);
  CHECK(text.rfind("k1:p1 ", 0) == 0);

  CHECK(word_count(gen.generate(persona, paper, 17, 18, 1)) == 17);
  // deterministic across calls and attempts
  CHECK(gen.generate(persona, paper, 45, 75, 1) ==
        gen.generate(persona, paper, 45, 75, 3));
}

TEST_CASE("synthetic generator keeps ids to a single token") {
  SyntheticAbstractGenerator gen;
  Persona persona = testsupport::make_persona("k1");
  persona.id = "hype maximal";
  PaperItem paper = testsupport::make_paper("p1");
  paper.id = "study one";
  const std::string text = gen.generate(persona, paper, 20, 20, 1);
  CHECK(text.rfind("hype_maximal:study_one", 0) == 0);
  CHECK(word_count(text) == 20);
}

TEST_CASE("counterfactual generation accepts an in-bounds first attempt") {
  SyntheticAbstractGenerator gen;
  const PaperItem paper = testsupport::make_paper("p1");  // 60-word abstract
  const Persona persona = testsupport::make_persona("k1");

  const CounterfactualAbstract cf = generate_counterfactual(paper, persona, gen);
  CHECK(cf.paper_id == "p1");
  CHECK(cf.persona_id == "k1");
  CHECK(cf.word_count == 60);
  CHECK(cf.word_count >= paper.abstract_word_count - 15);
  CHECK(cf.word_count <= paper.abstract_word_count + 15);
  CHECK(cf.generation_attempt == 1);
}

TEST_CASE("counterfactual generation retries until the length fits") {
  // 60-word target, bounds [45, 75]: 30 words fails, 50 passes
  ScriptedGenerator gen({testsupport::repeat_words("short", 30),
                         testsupport::repeat_words("fits", 50)});
  const PaperItem paper = testsupport::make_paper("p1");
  const Persona persona = testsupport::make_persona("k1");

  const CounterfactualAbstract cf = generate_counterfactual(paper, persona, gen);
  CHECK(cf.word_count == 50);
  CHECK(cf.generation_attempt == 2);
}

TEST_CASE("length exhaustion reports the closest attempt") {
  ScriptedGenerator gen({testsupport::repeat_words("a", 30),
                         testsupport::repeat_words("b", 80),
                         testsupport::repeat_words("c", 10)});
  const PaperItem paper = testsupport::make_paper("p1");
  const Persona persona = testsupport::make_persona("k1");

  try {
    generate_counterfactual(paper, persona, gen, 3);
    FAIL("expected LengthConstraintError");
  } catch (const LengthConstraintError& e) {
    CHECK(e.best_attempt.word_count == 80);  // distance 20 beats 30 and 50
    CHECK(e.best_attempt.generation_attempt == 2);
    CHECK(std::string(e.what()).find("80") != std::string::npos);
  }
}

TEST_CASE("counterfactual generation validates its inputs") {
  SyntheticAbstractGenerator gen;
  const Persona persona = testsupport::make_persona("k1");

  const PaperItem tiny = testsupport::make_paper("p1", 15);
  CHECK_THROWS_AS(generate_counterfactual(tiny, persona, gen),
                  InvalidArgumentError);
  CHECK_NOTHROW(
      generate_counterfactual(testsupport::make_paper("p2", 16), persona, gen));

  const PaperItem paper = testsupport::make_paper("p3");
  CHECK_THROWS_AS(generate_counterfactual(paper, persona, gen, 0),
                  InvalidArgumentError);
}

TEST_CASE("remote generator unwraps the abstract from a chatty reply") {
  auto chat = std::make_shared<testsupport::ScriptedChatBackend>(
      std::vector<std::string>{
          "Sure, here it is:\n```json\n{\"abstract\": \"a compelling summary\"}\n```"});
  RemoteAbstractGenerator gen(chat, generation_template());
  const Persona persona = testsupport::make_persona("k1");
  const PaperItem paper = testsupport::make_paper("p1");

  CHECK(gen.generate(persona, paper, 45, 75, 1) == "a compelling summary");
  REQUIRE(chat->prompts.size() == 1);
  const std::string& prompt = chat->prompts[0];
  CHECK(prompt.find(persona.system_prompt) != std::string::npos);
  CHECK(prompt.find(paper.substantive_content) != std::string::npos);
  CHECK(prompt.find("between 45 and 75 words") != std::string::npos);
}

TEST_CASE("remote generator restates the bounds after a length failure") {
  auto chat = std::make_shared<testsupport::ScriptedChatBackend>(
      std::vector<std::string>{"{\"abstract\": \"too short\"}"});
  RemoteAbstractGenerator gen(chat, generation_template());
  gen.generate(testsupport::make_persona("k1"), testsupport::make_paper("p1"),
               45, 75, 2);
  CHECK(chat->prompts[0].find("previous attempt violated the length") !=
        std::string::npos);
  CHECK(chat->prompts[0].find("between 45 and 75 words") != std::string::npos);
}

TEST_CASE("remote generator rejects replies without an abstract") {
  const Persona persona = testsupport::make_persona("k1");
  const PaperItem paper = testsupport::make_paper("p1");

  for (const std::string reply :
       {std::string("plain prose, no json"),
        std::string("{\"summary\": \"wrong key\"}"),
        std::string("{\"abstract\": 42}")}) {
    auto chat = std::make_shared<testsupport::ScriptedChatBackend>(
        std::vector<std::string>{reply});
    RemoteAbstractGenerator gen(chat, generation_template());
    CHECK_THROWS_AS(gen.generate(persona, paper, 45, 75, 1),
                    GeneratorProtocolError);
  }
}

TEST_CASE("remote generator checks its configuration") {
  auto chat = std::make_shared<testsupport::ScriptedChatBackend>(
      std::vector<std::string>{});
  CHECK_THROWS_AS(RemoteAbstractGenerator(nullptr, generation_template()),
                  InvalidArgumentError);
  CHECK_THROWS_AS(
      RemoteAbstractGenerator(chat, PromptTemplate{"g", "{mr_text} only"}),
      ConfigError);
}

TEST_CASE("panel generation covers every pair and persists results") {
  testsupport::TempDir dir;
  CorpusStore store(dir.path());
  const std::vector<PaperItem> papers = {testsupport::make_paper("p1"),
                                         testsupport::make_paper("p2")};
  const std::vector<Persona> panel = {testsupport::make_persona("k1"),
                                      testsupport::make_persona("k2"),
                                      testsupport::make_persona("k3")};
  SyntheticAbstractGenerator gen;

  const GenerationReport report =
      generate_panel_abstracts(papers, panel, gen, store, 2);
  CHECK(report.generated == 6);
  CHECK(report.skipped_existing == 0);
  CHECK(report.failures.empty());

  const auto stored = store.read_counterfactuals();
  REQUIRE(stored.size() == 6);
  for (const auto& paper : papers) {
    for (const auto& persona : panel) {
      const bool found = std::any_of(
          stored.begin(), stored.end(), [&](const CounterfactualAbstract& c) {
            return c.paper_id == paper.id && c.persona_id == persona.id;
          });
      CHECK(found);
    }
  }

  // a rerun generates nothing new
  const GenerationReport again =
      generate_panel_abstracts(papers, panel, gen, store, 2);
  CHECK(again.generated == 0);
  CHECK(again.skipped_existing == 6);
  CHECK(store.read_counterfactuals().size() == 6);
}

TEST_CASE("panel generation isolates per-pair failures") {
  testsupport::TempDir dir;
  CorpusStore store(dir.path());
  const std::vector<PaperItem> papers = {testsupport::make_paper("p1"),
                                         testsupport::make_paper("p2")};
  const std::vector<Persona> panel = {testsupport::make_persona("k1"),
                                      testsupport::make_persona("k2")};

  FailingForPersona flaky("k2");
  const GenerationReport report =
      generate_panel_abstracts(papers, panel, flaky, store, 1);
  CHECK(report.generated == 2);
  REQUIRE(report.failures.size() == 2);
  for (const auto& f : report.failures) {
    CHECK(f.persona_id == "k2");
    CHECK(f.message.find("refused") != std::string::npos);
  }
  CHECK(store.read_counterfactuals().size() == 2);

  // the repaired backend fills in only what failed
  SyntheticAbstractGenerator gen;
  const GenerationReport retry =
      generate_panel_abstracts(papers, panel, gen, store, 1);
  CHECK(retry.generated == 2);
  CHECK(retry.skipped_existing == 2);
  CHECK(store.read_counterfactuals().size() == 4);
}

TEST_CASE("panel generation rejects empty inputs") {
  testsupport::TempDir dir;
  CorpusStore store(dir.path());
  SyntheticAbstractGenerator gen;
  CHECK_THROWS_AS(generate_panel_abstracts({}, {testsupport::make_persona("k")},
                                           gen, store),
                  InvalidArgumentError);
  CHECK_THROWS_AS(
      generate_panel_abstracts({testsupport::make_paper("p")}, {}, gen, store),
      InvalidArgumentError);
}

TEST_CASE("targeted generation touches only the requested pairs") {
  testsupport::TempDir dir;
  CorpusStore store(dir.path());
  const std::vector<PaperItem> papers = {testsupport::make_paper("p1"),
                                         testsupport::make_paper("p2")};
  const std::vector<Persona> panel = {testsupport::make_persona("k1"),
                                      testsupport::make_persona("k2")};
  SyntheticAbstractGenerator gen;

  const GenerationReport report = generate_missing_counterfactuals(
      papers, panel, {{"p1", "k2"}, {"p2", "k1"}, {"p1", "k2"}}, gen, store, 1);
  CHECK(report.generated == 2);  // the duplicate request collapses
  const auto stored = store.read_counterfactuals();
  REQUIRE(stored.size() == 2);
  CHECK(stored[0].paper_id + ":" + stored[0].persona_id == "p1:k2");
  CHECK(stored[1].paper_id + ":" + stored[1].persona_id == "p2:k1");
}

TEST_CASE("targeted generation rejects unknown ids") {
  testsupport::TempDir dir;
  CorpusStore store(dir.path());
  const std::vector<PaperItem> papers = {testsupport::make_paper("p1")};
  const std::vector<Persona> panel = {testsupport::make_persona("k1")};
  SyntheticAbstractGenerator gen;

  CHECK_THROWS_AS(generate_missing_counterfactuals(papers, panel,
                                                   {{"p9", "k1"}}, gen, store),
                  InvalidArgumentError);
  CHECK_THROWS_AS(generate_missing_counterfactuals(papers, panel,
                                                   {{"p1", "k9"}}, gen, store),
                  InvalidArgumentError);
}

TEST_CASE("substance extraction returns the trimmed content") {
  auto chat = std::make_shared<testsupport::ScriptedChatBackend>(
      std::vector<std::string>{
          "{\"substantive_content\": \"  methods and results text \"}"});
  RemoteSubstanceExtractor extractor(
      chat, PromptTemplate{"ex_v1", "Extract from:\n{full_text}"});
  CHECK(extract_substance("full paper body", extractor) ==
        "methods and results text");
  CHECK(chat->prompts.at(0).find("full paper body") != std::string::npos);
}

TEST_CASE("substance extraction failures are typed") {
  RemoteSubstanceExtractor empty_reply(
      std::make_shared<testsupport::ScriptedChatBackend>(
          std::vector<std::string>{"{\"substantive_content\": \"   \"}"}),
      PromptTemplate{"ex_v1", "{full_text}"});
  CHECK_THROWS_AS(extract_substance("body", empty_reply), ExtractionFailedError);

  RemoteSubstanceExtractor wrong_key(
      std::make_shared<testsupport::ScriptedChatBackend>(
          std::vector<std::string>{"{\"content\": \"x\"}"}),
      PromptTemplate{"ex_v1", "{full_text}"});
  CHECK_THROWS_AS(extract_substance("body", wrong_key), GeneratorProtocolError);

  RemoteSubstanceExtractor unused(
      std::make_shared<testsupport::ScriptedChatBackend>(
          std::vector<std::string>{}),
      PromptTemplate{"ex_v1", "{full_text}"});
  CHECK_THROWS_AS(extract_substance("   ", unused), InvalidArgumentError);

  CHECK_THROWS_AS(
      RemoteSubstanceExtractor(
          std::make_shared<testsupport::ScriptedChatBackend>(
              std::vector<std::string>{}),
          PromptTemplate{"ex_v1", "no slot"}),
      ConfigError);
}
