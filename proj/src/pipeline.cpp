#include "rhetor/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "rhetor/util.hpp"

namespace rhetor {

namespace {

uint64_t pair_seed(uint64_t plan_seed, const std::string& id_a,
                   const std::string& id_b) {
  const nlohmann::json key = {plan_seed, id_a, id_b};
  const std::string digest = content_id(key);
  return std::stoull(digest.substr(0, 16), nullptr, 16);
}

void emit(const ProgressFn& progress, const std::string& stage, long long done,
          long long total, const std::string& detail = "") {
  if (progress) progress(ProgressEvent{stage, done, total, detail});
}

std::string text_key(const std::string& paper_id, const std::string& persona_id) {
  return paper_id + "\x1f" + persona_id;
}

std::string slot_label(const ComparisonSlot& slot) {
  auto item_label = [](const ItemRef& item) {
    return item.is_original() ? std::string("original") : *item.persona_id;
  };
  return slot.paper_id + " [" + item_label(slot.item_a) + " vs " +
         item_label(slot.item_b) + "]";
}

std::unordered_map<std::string, std::string> counterfactual_texts(
    const CorpusStore& store) {
  std::unordered_map<std::string, std::string> texts;
  for (const auto& c : store.read_counterfactuals()) {
    texts.emplace(text_key(c.paper_id, c.persona_id), c.text);
  }
  return texts;
}

void persist_missing_papers(CorpusStore& store,
                            const std::vector<PaperItem>& papers) {
  std::unordered_set<std::string> known;
  for (const auto& p : store.read_papers()) known.insert(p.id);
  for (const auto& p : papers) {
    if (!known.count(p.id)) store.append_paper(p);
  }
}

std::map<std::string, double> calibrated_scores(
    const std::vector<Persona>& panel) {
  std::map<std::string, double> scores;
  for (const auto& p : panel) {
    if (!p.calibrated_score) {
      throw DataIntegrityError("persona " + p.id +
                               " has no calibrated score; calibrate first");
    }
    scores[p.id] = *p.calibrated_score;
  }
  return scores;
}

struct JudgePass {
  long long judged = 0;
  std::vector<std::string> failures;
};

JudgePass judge_slots(CorpusStore& store, const std::vector<ComparisonSlot>& slots,
                      const std::unordered_map<std::string, std::string>& texts,
                      const std::unordered_map<std::string, const PaperItem*>& papers,
                      PairwiseJudge& judge, const std::string& template_id,
                      int concurrency, const ProgressFn& progress) {
  JudgePass pass;
  std::atomic<long long> judged{0};
  std::atomic<long long> done{0};
  std::mutex failures_mutex;

  auto text_of = [&](const ItemRef& item) -> std::optional<std::string> {
    if (item.is_original()) {
      const auto it = papers.find(item.paper_id);
      if (it == papers.end()) return std::nullopt;
      return it->second->original_abstract;
    }
    const auto it = texts.find(text_key(item.paper_id, *item.persona_id));
    if (it == texts.end()) return std::nullopt;
    return it->second;
  };

  parallel_for(slots.size(), static_cast<size_t>(std::max(1, concurrency)),
               [&](size_t i) {
    const ComparisonSlot& slot = slots[i];
    try {
      const auto text_a = text_of(slot.item_a);
      const auto text_b = text_of(slot.item_b);
      if (!text_a || !text_b) {
        throw DataIntegrityError("no text available for a judged item of paper " +
                                 slot.paper_id);
      }
      JudgeRequest request;
      request.paper_id = slot.paper_id;
      request.item_a = slot.item_a;
      request.item_b = slot.item_b;
      request.text_a = *text_a;
      request.text_b = *text_b;
      request.template_id = template_id;
      store.append_comparison(judge.judge_pair(request));
      ++judged;
    } catch (const Error& e) {
      std::lock_guard<std::mutex> guard(failures_mutex);
      pass.failures.push_back(slot_label(slot) + ": " + e.what());
    }
    emit(progress, "judge", ++done, static_cast<long long>(slots.size()),
         slot.paper_id);
  });

  pass.judged = judged.load();
  return pass;
}

}  // namespace

std::vector<ComparisonSlot> plan_calibration(const std::vector<PaperItem>& papers,
                                             const std::vector<Persona>& panel,
                                             int samples_per_pair,
                                             uint64_t plan_seed) {
  if (samples_per_pair < 1) {
    throw InvalidArgumentError("samples_per_pair must be at least 1");
  }
  std::vector<std::string> ids;
  for (const auto& p : panel) ids.push_back(p.id);
  std::sort(ids.begin(), ids.end());

  std::vector<ComparisonSlot> plan;
  if (papers.empty()) return plan;
  const size_t take =
      std::min(papers.size(), static_cast<size_t>(samples_per_pair));

  for (size_t i = 0; i < ids.size(); ++i) {
    for (size_t j = i + 1; j < ids.size(); ++j) {
      std::mt19937_64 rng(pair_seed(plan_seed, ids[i], ids[j]));
      std::vector<size_t> order(papers.size());
      std::iota(order.begin(), order.end(), 0);
      for (size_t t = 0; t < take; ++t) {
        const size_t pick =
            t + static_cast<size_t>(rng() % (order.size() - t));
        std::swap(order[t], order[pick]);
        const std::string& paper_id = papers[order[t]].id;
        plan.push_back(ComparisonSlot{
            paper_id,
            ItemRef::persona(paper_id, ids[i]),
            ItemRef::persona(paper_id, ids[j]),
        });
      }
    }
  }
  return plan;
}

std::vector<ComparisonSlot> plan_scoring(const std::vector<PaperItem>& papers,
                                         const std::vector<Persona>& panel) {
  std::vector<ComparisonSlot> plan;
  for (const auto& paper : papers) {
    for (const auto& persona : panel) {
      plan.push_back(ComparisonSlot{
          paper.id,
          ItemRef::original(paper.id),
          ItemRef::persona(paper.id, persona.id),
      });
    }
  }
  return plan;
}

CalibrationRunOutcome run_calibration(CorpusStore& store,
                                      const std::vector<PaperItem>& papers,
                                      std::vector<Persona> panel,
                                      AbstractGenerator& generator,
                                      PairwiseJudge& judge,
                                      const CalibrationRunOptions& options,
                                      const ProgressFn& progress) {
  if (panel.size() < 2) {
    throw InvalidArgumentError("calibration needs at least two personas");
  }
  if (papers.empty()) {
    throw InvalidArgumentError("calibration needs at least one paper");
  }

  persist_missing_papers(store, papers);

  CalibrationRunOutcome outcome;
  const std::vector<ComparisonSlot> plan = plan_calibration(
      papers, panel, options.samples_per_pair, options.plan_seed);
  outcome.slots_planned = static_cast<long long>(plan.size());

  const std::vector<ComparisonSlot> pending =
      pending_work(plan, store.read_comparisons());
  outcome.slots_already_done =
      outcome.slots_planned - static_cast<long long>(pending.size());

  std::set<std::pair<std::string, std::string>> needed;
  for (const auto& slot : pending) {
    needed.emplace(slot.paper_id, *slot.item_a.persona_id);
    needed.emplace(slot.paper_id, *slot.item_b.persona_id);
  }
  emit(progress, "generate", 0, static_cast<long long>(needed.size()));
  outcome.generation = generate_missing_counterfactuals(
      papers, panel,
      std::vector<std::pair<std::string, std::string>>(needed.begin(),
                                                       needed.end()),
      generator, store, options.concurrency, options.generation_max_attempts);
  emit(progress, "generate", static_cast<long long>(needed.size()),
       static_cast<long long>(needed.size()));

  const auto texts = counterfactual_texts(store);
  std::unordered_map<std::string, const PaperItem*> papers_by_id;
  for (const auto& p : papers) papers_by_id.emplace(p.id, &p);

  const JudgePass pass =
      judge_slots(store, pending, texts, papers_by_id, judge,
                  options.template_id, options.concurrency, progress);
  outcome.judged = pass.judged;
  outcome.judge_failures = pass.failures;

  std::unordered_set<std::string> panel_ids;
  for (const auto& p : panel) panel_ids.insert(p.id);
  std::vector<ComparisonRecord> panel_records;
  for (const auto& r : store.read_comparisons()) {
    if (r.item_a.is_original() || r.item_b.is_original()) continue;
    if (!panel_ids.count(*r.item_a.persona_id) ||
        !panel_ids.count(*r.item_b.persona_id)) {
      continue;
    }
    panel_records.push_back(r);
  }

  emit(progress, "fit", 0, 1);
  outcome.fit = fit_bt(build_pair_counts(panel_records, panel), options.fit);
  emit(progress, "fit", 1, 1);

  for (auto& p : panel) p.calibrated_score = outcome.fit.scores.at(p.id);
  store.write_fit(outcome.fit);
  store.write_personas(panel);

  nlohmann::json manifest{
      {"kind", "calibration"},
      {"timestamp", rfc3339_utc_now()},
      {"paper_count", papers.size()},
      {"panel_size", panel.size()},
      {"samples_per_pair", options.samples_per_pair},
      {"plan_seed", options.plan_seed},
      {"template_id", options.template_id},
      {"slots_planned", outcome.slots_planned},
      {"slots_already_done", outcome.slots_already_done},
      {"judged", outcome.judged},
      {"generated", outcome.generation.generated},
      {"generation_failures", outcome.generation.failures.size()},
      {"judge_failures", outcome.judge_failures.size()},
      {"fit", {{"converged", outcome.fit.converged},
               {"iterations", outcome.fit.iterations},
               {"log_likelihood", outcome.fit.log_likelihood}}},
  };
  store.append_run_manifest(manifest);
  return outcome;
}

ScoringRunOutcome run_scoring(CorpusStore& store,
                              const std::vector<PaperItem>& papers,
                              const std::vector<Persona>& panel,
                              AbstractGenerator& generator,
                              PairwiseJudge& judge,
                              const ScoringRunOptions& options,
                              const ProgressFn& progress) {
  if (options.mode != "map" && options.mode != "adaptive") {
    throw ConfigError("scoring mode must be \"map\" or \"adaptive\", got \"" +
                      options.mode + "\"");
  }
  if (panel.empty()) {
    throw InvalidArgumentError("scoring needs a calibrated panel");
  }

  const std::map<std::string, double> panel_scores = calibrated_scores(panel);
  ScoringRunOutcome outcome;
  if (papers.empty()) return outcome;

  persist_missing_papers(store, papers);
  std::unordered_map<std::string, const PaperItem*> papers_by_id;
  for (const auto& p : papers) papers_by_id.emplace(p.id, &p);

  std::vector<std::optional<QueryScore>> slots(papers.size());
  std::mutex failures_mutex;

  if (options.mode == "map") {
    const std::vector<ComparisonSlot> plan = plan_scoring(papers, panel);
    const std::vector<ComparisonSlot> pending =
        pending_work(plan, store.read_comparisons());

    std::set<std::pair<std::string, std::string>> needed;
    for (const auto& slot : pending) {
      needed.emplace(slot.paper_id, *slot.item_b.persona_id);
    }
    emit(progress, "generate", 0, static_cast<long long>(needed.size()));
    outcome.generation = generate_missing_counterfactuals(
        papers, panel,
        std::vector<std::pair<std::string, std::string>>(needed.begin(),
                                                         needed.end()),
        generator, store, options.concurrency,
        options.generation_max_attempts);
    emit(progress, "generate", static_cast<long long>(needed.size()),
         static_cast<long long>(needed.size()));

    const auto texts = counterfactual_texts(store);
    const JudgePass pass =
        judge_slots(store, pending, texts, papers_by_id, judge,
                    options.template_id, options.concurrency, progress);
    outcome.judged = pass.judged;

    std::unordered_map<std::string, std::map<std::string, bool>> outcomes;
    for (const auto& r : store.read_comparisons()) {
      if (r.item_a.is_original() == r.item_b.is_original()) continue;
      if (!papers_by_id.count(r.item_a.paper_id)) continue;
      const ItemRef& persona_item =
          r.item_a.is_original() ? r.item_b : r.item_a;
      if (!panel_scores.count(*persona_item.persona_id)) continue;
      outcomes[r.item_a.paper_id].emplace(
          *persona_item.persona_id, r.winning_item().is_original());
    }

    for (size_t i = 0; i < papers.size(); ++i) {
      const PaperItem& paper = papers[i];
      const auto it = outcomes.find(paper.id);
      if (it == outcomes.end()) {
        outcome.paper_failures.push_back(paper.id +
                                         ": no judged comparisons");
        continue;
      }
      QueryEvidence evidence;
      evidence.paper_id = paper.id;
      evidence.prior_mean = options.prior.prior_mean;
      evidence.prior_std = options.prior.prior_std;
      for (const auto& [persona_id, won] : it->second) {
        evidence.outcomes.emplace_back(persona_id, won);
      }
      const MapScore map = map_score(evidence, panel_scores);
      QueryScore score;
      score.paper_id = paper.id;
      score.score = map.score;
      score.stddev = map.stddev;
      score.mode = "map";
      score.comparisons = evidence.outcomes;
      slots[i] = std::move(score);
      emit(progress, "score", static_cast<long long>(i + 1),
           static_cast<long long>(papers.size()), paper.id);
    }
  } else {
    auto replay = ReplayJudge(
        store.read_comparisons(),
        std::shared_ptr<PairwiseJudge>(&judge, [](PairwiseJudge*) {}));
    replay.set_sink(
        [&store](const ComparisonRecord& r) { store.append_comparison(r); });

    std::mutex texts_mutex;
    auto texts = counterfactual_texts(store);
    std::atomic<int> generated{0};

    CounterfactualTextLookup lookup =
        [&](const std::string& paper_id,
            const std::string& persona_id) -> std::string {
      const std::string key = text_key(paper_id, persona_id);
      {
        std::lock_guard<std::mutex> guard(texts_mutex);
        const auto it = texts.find(key);
        if (it != texts.end()) return it->second;
      }
      const auto paper_it = papers_by_id.find(paper_id);
      if (paper_it == papers_by_id.end()) {
        throw DataIntegrityError("no such query paper: " + paper_id);
      }
      const auto persona_it =
          std::find_if(panel.begin(), panel.end(),
                       [&](const Persona& p) { return p.id == persona_id; });
      if (persona_it == panel.end()) {
        throw DataIntegrityError("no such persona: " + persona_id);
      }
      const CounterfactualAbstract c =
          generate_counterfactual(*paper_it->second, *persona_it, generator,
                                  options.generation_max_attempts);
      store.append_counterfactual(c);
      ++generated;
      std::lock_guard<std::mutex> guard(texts_mutex);
      texts[key] = c.text;
      return c.text;
    };

    AdaptiveOptions adaptive;
    adaptive.prior_mean = options.prior.prior_mean;
    adaptive.prior_std = options.prior.prior_std;
    adaptive.stop_std = options.adaptive_stop_std;
    adaptive.max_comparisons = options.adaptive_max_comparisons > 0
                                   ? options.adaptive_max_comparisons
                                   : static_cast<int>(panel.size());
    adaptive.template_id = options.template_id;

    std::atomic<long long> done{0};
    parallel_for(papers.size(),
                 static_cast<size_t>(std::max(1, options.concurrency)),
                 [&](size_t i) {
      const PaperItem& paper = papers[i];
      try {
        const AdaptiveResult result =
            adaptive_score(paper, panel, replay, lookup, adaptive);
        QueryScore score;
        score.paper_id = paper.id;
        score.score = result.posterior.mean;
        score.stddev = result.posterior.stddev();
        score.mode = "adaptive";
        for (const auto& r : result.records) {
          const ItemRef& persona_item =
              r.item_a.is_original() ? r.item_b : r.item_a;
          score.comparisons.emplace_back(*persona_item.persona_id,
                                         r.winning_item().is_original());
        }
        slots[i] = std::move(score);
      } catch (const Error& e) {
        std::lock_guard<std::mutex> guard(failures_mutex);
        outcome.paper_failures.push_back(paper.id + ": " +
                                         std::string(e.what()));
      }
      emit(progress, "score", ++done, static_cast<long long>(papers.size()),
           paper.id);
    });
    outcome.judged = replay.misses();
    outcome.generation.generated = generated.load();
  }

  for (auto& slot : slots) {
    if (!slot) continue;
    store.append_score(*slot);
    outcome.scores.push_back(std::move(*slot));
  }

  nlohmann::json manifest{
      {"kind", "scoring"},
      {"timestamp", rfc3339_utc_now()},
      {"mode", options.mode},
      {"paper_count", papers.size()},
      {"panel_size", panel.size()},
      {"template_id", options.template_id},
      {"judged", outcome.judged},
      {"generated", outcome.generation.generated},
      {"scored", outcome.scores.size()},
      {"paper_failures", outcome.paper_failures.size()},
      {"prior", {{"mean", options.prior.prior_mean},
                 {"std", options.prior.prior_std}}},
  };
  if (options.mode == "adaptive") {
    manifest["adaptive"] = {
        {"stop_std", options.adaptive_stop_std},
        {"max_comparisons", options.adaptive_max_comparisons},
    };
  }
  store.append_run_manifest(manifest);
  return outcome;
}

}  // namespace rhetor
