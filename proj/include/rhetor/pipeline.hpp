#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rhetor/calibration.hpp"
#include "rhetor/generation.hpp"
#include "rhetor/judge.hpp"
#include "rhetor/query.hpp"
#include "rhetor/store.hpp"

namespace rhetor {

struct ProgressEvent {
  std::string stage;  // "generate", "judge", "fit", "score"
  long long done = 0;
  long long total = 0;
  std::string detail;
};

using ProgressFn = std::function<void(const ProgressEvent&)>;

// Deterministic all-pairs calibration plan: for every unordered persona pair
// (ids sorted), samples_per_pair distinct papers are drawn by a seeded
// shuffle (every paper, when the corpus is smaller). The plan depends only on
// (papers, panel, samples_per_pair, plan_seed), which is what makes
// interrupted runs resumable.
std::vector<ComparisonSlot> plan_calibration(const std::vector<PaperItem>& papers,
                                             const std::vector<Persona>& panel,
                                             int samples_per_pair,
                                             uint64_t plan_seed);

// Batch scoring plan: original vs every panel persona, papers outermost.
std::vector<ComparisonSlot> plan_scoring(const std::vector<PaperItem>& papers,
                                         const std::vector<Persona>& panel);

struct CalibrationRunOptions {
  int samples_per_pair = 20;
  uint64_t plan_seed = 42;
  std::string template_id = "pairwise_v1";
  FitOptions fit;
  int concurrency = 4;
  int generation_max_attempts = 3;
};

struct CalibrationRunOutcome {
  BTFit fit;
  long long slots_planned = 0;
  long long slots_already_done = 0;
  long long judged = 0;
  GenerationReport generation;
  std::vector<std::string> judge_failures;
};

// End-to-end panel calibration over a store: persists inputs, generates
// missing counterfactuals, judges missing slots, fits, and persists the fit,
// the calibrated personas, and a run manifest. A rerun over a completed
// store performs zero generator and zero judge calls.
CalibrationRunOutcome run_calibration(CorpusStore& store,
                                      const std::vector<PaperItem>& papers,
                                      std::vector<Persona> panel,
                                      AbstractGenerator& generator,
                                      PairwiseJudge& judge,
                                      const CalibrationRunOptions& options,
                                      const ProgressFn& progress = {});

struct ScoringRunOptions {
  std::string mode = "map";  // "map" | "adaptive"
  QueryPriorOptions prior;
  double adaptive_stop_std = 0.5;
  int adaptive_max_comparisons = 0;  // 0: use panel size
  std::string template_id = "pairwise_v1";
  int concurrency = 4;
  int generation_max_attempts = 3;
};

struct ScoringRunOutcome {
  std::vector<QueryScore> scores;  // papers order, failed papers omitted
  long long judged = 0;
  GenerationReport generation;
  std::vector<std::string> paper_failures;
};

// Scores query papers against a calibrated panel. Batch mode judges the
// original against every persona then runs MAP; adaptive mode reuses stored
// judgments through a replay cache and only asks the judge for missing
// pairs. Per-paper failures are collected, not fatal.
ScoringRunOutcome run_scoring(CorpusStore& store,
                              const std::vector<PaperItem>& papers,
                              const std::vector<Persona>& panel,
                              AbstractGenerator& generator,
                              PairwiseJudge& judge,
                              const ScoringRunOptions& options,
                              const ProgressFn& progress = {});

}  // namespace rhetor
