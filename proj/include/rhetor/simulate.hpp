#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "rhetor/calibration.hpp"
#include "rhetor/judge.hpp"
#include "rhetor/query.hpp"
#include "rhetor/types.hpp"

namespace rhetor::sim {

// Synthetic panel whose true scores are equally spaced on [lo, hi]. Persona
// ids are zero-padded ("p00", "p01", ...) so lexicographic order matches
// score order.
struct SyntheticPanel {
  std::vector<Persona> personas;
  std::map<std::string, double> true_scores;  // by persona id
};

SyntheticPanel make_panel(int k, double lo = -3.0, double hi = 3.0);

// Synthetic query papers with true scores drawn from N(mean, stddev^2).
struct SyntheticQueries {
  std::vector<PaperItem> papers;
  std::map<std::string, double> true_scores;  // by paper id
};

SyntheticQueries make_queries(int count, double mean, double stddev,
                              uint64_t seed);

// Placeholder text for an item, distinct per (paper, persona). Used both
// when producing simulated judge requests and when replaying them.
std::string synthetic_counterfactual_text(const std::string& paper_id,
                                          const std::string& persona_id);

// All-pairs calibration evidence: samples_per_pair judgments for every
// unordered persona pair, routed through the given judge.
std::vector<ComparisonRecord> calibration_records(const SyntheticPanel& panel,
                                                  int samples_per_pair,
                                                  PairwiseJudge& judge);

// One original-vs-persona judgment per (query, persona) pair.
std::vector<ComparisonRecord> query_records(const SyntheticQueries& queries,
                                            const SyntheticPanel& panel,
                                            PairwiseJudge& judge);

// One synthetic-data evaluation scenario. The defaults mirror the reference
// protocol: a 30-persona panel on [-3, 3] judged 20 times per pair, with the
// query spread set so split-half score agreement lands at the empirically
// observed level (~0.89).
struct Scenario {
  uint64_t seed = 1;
  int num_seeds = 1;

  int panel_size = 30;
  double panel_lo = -3.0;
  double panel_hi = 3.0;
  int samples_per_pair = 20;
  JudgeNoise noise = JudgeNoise::BT;

  int query_count = 200;
  double query_mean = 0.0;
  double query_std = 2.2;

  int robustness_trials = 200;
  double adaptive_stop_std = 0.5;
  int adaptive_max_comparisons = 0;  // 0: use panel_size

  FitOptions fit;
  QueryPriorOptions prior;
};

// Reads a scenario from JSON; unknown or ill-typed fields raise ConfigError
// naming the field.
Scenario scenario_from_json(const nlohmann::json& j);

struct SeedMetrics {
  uint64_t seed = 0;
  double recovery_spearman = 0.0;
  double recovery_rmse = 0.0;
  double robustness_mean_spearman = 0.0;
  double robustness_skipped = 0.0;
  double winrate_spearman = 0.0;
  double winrate_min = 0.0;
  double winrate_max = 0.0;
  double adaptive_mean_comparisons = 0.0;
  double adaptive_mean_abs_dev = 0.0;  // |posterior mean - batch MAP|
  double judge_calls = 0.0;
};

struct ScenarioResult {
  Scenario scenario;
  std::vector<SeedMetrics> per_seed;

  SeedMetrics averages() const;  // arithmetic mean over seeds; seed field 0
};

// Runs one full synthetic evaluation per seed (seed, seed+1, ...):
// calibration recovery, subset robustness, win-rate coverage, and
// adaptive-vs-batch agreement. Deterministic per seed.
SeedMetrics run_seed(const Scenario& scenario, uint64_t seed);
ScenarioResult run_scenario(const Scenario& scenario);

// Long-form CSV (seed,metric,value) with one extra "mean" row block.
// Byte-identical for identical scenarios.
std::string metrics_csv(const ScenarioResult& result);

}  // namespace rhetor::sim
