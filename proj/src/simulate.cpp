#include "rhetor/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <sstream>

#include "rhetor/analysis.hpp"
#include "rhetor/util.hpp"

namespace rhetor::sim {

namespace {

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string padded(const std::string& prefix, int value, int width) {
  std::string digits = std::to_string(value);
  while (static_cast<int>(digits.size()) < width) digits.insert(0, "0");
  return prefix + digits;
}

int id_width(int count) {
  int width = 1;
  for (int v = count - 1; v >= 10; v /= 10) ++width;
  return width;
}

template <typename T>
T field_as(const nlohmann::json& value, const std::string& name);

template <>
double field_as<double>(const nlohmann::json& value, const std::string& name) {
  if (!value.is_number()) {
    throw ConfigError("scenario field '" + name + "' must be a number");
  }
  return value.get<double>();
}

template <>
int field_as<int>(const nlohmann::json& value, const std::string& name) {
  if (!value.is_number_integer()) {
    throw ConfigError("scenario field '" + name + "' must be an integer");
  }
  return value.get<int>();
}

template <>
uint64_t field_as<uint64_t>(const nlohmann::json& value, const std::string& name) {
  if (!value.is_number_unsigned() && !value.is_number_integer()) {
    throw ConfigError("scenario field '" + name + "' must be an integer");
  }
  if (value.is_number_integer() && value.get<long long>() < 0) {
    throw ConfigError("scenario field '" + name + "' must be non-negative");
  }
  return value.get<uint64_t>();
}

}  // namespace

SyntheticPanel make_panel(int k, double lo, double hi) {
  if (k < 1) throw InvalidArgumentError("panel size must be at least 1");
  if (!(lo <= hi)) throw InvalidArgumentError("panel score range is inverted");

  SyntheticPanel panel;
  const int width = id_width(k);
  for (int i = 0; i < k; ++i) {
    Persona p;
    p.id = padded("p", i, width);
    p.display_name = "synthetic persona " + std::to_string(i);
    p.system_prompt = "You are synthetic persona " + std::to_string(i) + ".";
    panel.personas.push_back(p);
    const double score =
        k == 1 ? 0.5 * (lo + hi)
               : lo + (hi - lo) * static_cast<double>(i) / (k - 1);
    panel.true_scores[p.id] = score;
  }
  return panel;
}

SyntheticQueries make_queries(int count, double mean, double stddev,
                              uint64_t seed) {
  if (count < 1) throw InvalidArgumentError("query count must be at least 1");
  if (!(stddev >= 0.0)) {
    throw InvalidArgumentError("query stddev must be non-negative");
  }

  SyntheticQueries queries;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> draw(mean, stddev);
  const int width = id_width(count);
  for (int i = 0; i < count; ++i) {
    PaperItem paper;
    paper.id = padded("q", i, width);
    paper.substantive_content =
        "Synthetic methods and results for query " + paper.id + ".";
    std::ostringstream text;
    text << "Original abstract of " << paper.id << ".";
    for (int w = 0; w < 56; ++w) text << " token" << w;
    paper.original_abstract = text.str();
    paper.abstract_word_count = word_count(paper.original_abstract);
    queries.papers.push_back(std::move(paper));
    queries.true_scores[queries.papers.back().id] =
        stddev == 0.0 ? mean : draw(rng);
  }
  return queries;
}

std::string synthetic_counterfactual_text(const std::string& paper_id,
                                          const std::string& persona_id) {
  return "Counterfactual abstract of " + paper_id + " as written by " +
         persona_id + ".";
}

std::vector<ComparisonRecord> calibration_records(const SyntheticPanel& panel,
                                                  int samples_per_pair,
                                                  PairwiseJudge& judge) {
  if (samples_per_pair < 1) {
    throw InvalidArgumentError("samples_per_pair must be at least 1");
  }
  std::vector<ComparisonRecord> records;
  const auto& personas = panel.personas;
  for (size_t i = 0; i < personas.size(); ++i) {
    for (size_t j = i + 1; j < personas.size(); ++j) {
      for (int s = 0; s < samples_per_pair; ++s) {
        const std::string paper_id = "cal_" + personas[i].id + "_" +
                                     personas[j].id + "_" +
                                     padded("", s, 3);
        JudgeRequest request;
        request.paper_id = paper_id;
        request.item_a = ItemRef::persona(paper_id, personas[i].id);
        request.item_b = ItemRef::persona(paper_id, personas[j].id);
        request.text_a = synthetic_counterfactual_text(paper_id, personas[i].id);
        request.text_b = synthetic_counterfactual_text(paper_id, personas[j].id);
        records.push_back(judge.judge_pair(request));
      }
    }
  }
  return records;
}

std::vector<ComparisonRecord> query_records(const SyntheticQueries& queries,
                                            const SyntheticPanel& panel,
                                            PairwiseJudge& judge) {
  std::vector<ComparisonRecord> records;
  for (const auto& paper : queries.papers) {
    for (const auto& persona : panel.personas) {
      JudgeRequest request;
      request.paper_id = paper.id;
      request.item_a = ItemRef::original(paper.id);
      request.item_b = ItemRef::persona(paper.id, persona.id);
      request.text_a = paper.original_abstract;
      request.text_b = synthetic_counterfactual_text(paper.id, persona.id);
      records.push_back(judge.judge_pair(request));
    }
  }
  return records;
}

Scenario scenario_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("scenario must be a JSON object");
  Scenario s;
  for (const auto& [key, value] : j.items()) {
    if (key == "seed") {
      s.seed = field_as<uint64_t>(value, key);
    } else if (key == "num_seeds") {
      s.num_seeds = field_as<int>(value, key);
    } else if (key == "panel_size") {
      s.panel_size = field_as<int>(value, key);
    } else if (key == "panel_lo") {
      s.panel_lo = field_as<double>(value, key);
    } else if (key == "panel_hi") {
      s.panel_hi = field_as<double>(value, key);
    } else if (key == "samples_per_pair") {
      s.samples_per_pair = field_as<int>(value, key);
    } else if (key == "noise") {
      if (!value.is_string()) {
        throw ConfigError("scenario field 'noise' must be a string");
      }
      const std::string name = value.get<std::string>();
      if (name == "bt") {
        s.noise = JudgeNoise::BT;
      } else if (name == "deterministic") {
        s.noise = JudgeNoise::Deterministic;
      } else {
        throw ConfigError("scenario field 'noise' must be \"bt\" or "
                          "\"deterministic\", got \"" + name + "\"");
      }
    } else if (key == "query_count") {
      s.query_count = field_as<int>(value, key);
    } else if (key == "query_mean") {
      s.query_mean = field_as<double>(value, key);
    } else if (key == "query_std") {
      s.query_std = field_as<double>(value, key);
    } else if (key == "robustness_trials") {
      s.robustness_trials = field_as<int>(value, key);
    } else if (key == "adaptive_stop_std") {
      s.adaptive_stop_std = field_as<double>(value, key);
    } else if (key == "adaptive_max_comparisons") {
      s.adaptive_max_comparisons = field_as<int>(value, key);
    } else if (key == "fit_tolerance") {
      s.fit.tolerance = field_as<double>(value, key);
    } else if (key == "fit_max_iterations") {
      s.fit.max_iterations = field_as<int>(value, key);
    } else if (key == "fit_smoothing") {
      s.fit.smoothing = field_as<double>(value, key);
    } else if (key == "prior_mean") {
      s.prior.prior_mean = field_as<double>(value, key);
    } else if (key == "prior_std") {
      s.prior.prior_std = field_as<double>(value, key);
    } else {
      throw ConfigError("unknown scenario field '" + key + "'");
    }
  }
  return s;
}

SeedMetrics run_seed(const Scenario& scenario, uint64_t seed) {
  if (scenario.panel_size < 2) {
    throw InvalidArgumentError("scenario: panel_size must be at least 2");
  }
  if (scenario.query_count < 3) {
    throw InvalidArgumentError("scenario: query_count must be at least 3");
  }

  const SyntheticPanel panel =
      make_panel(scenario.panel_size, scenario.panel_lo, scenario.panel_hi);
  const SyntheticQueries queries =
      make_queries(scenario.query_count, scenario.query_mean,
                   scenario.query_std, mix_seed(seed, 1));

  std::map<std::string, double> true_scores = panel.true_scores;
  true_scores.insert(queries.true_scores.begin(), queries.true_scores.end());

  auto backend = std::make_shared<SimulatedJudgeBackend>(
      true_scores, scenario.noise, mix_seed(seed, 2));
  GatewayOptions gateway_options;
  gateway_options.rng_seed = mix_seed(seed, 3);
  JudgeGateway gateway(backend, gateway_options);

  const std::vector<ComparisonRecord> cal_records =
      calibration_records(panel, scenario.samples_per_pair, gateway);
  const BTFit fit =
      fit_bt(build_pair_counts(cal_records, panel.personas), scenario.fit);

  SeedMetrics m;
  m.seed = seed;

  {
    std::vector<double> fitted, truth;
    double true_mean = 0.0;
    for (const auto& [id, s] : panel.true_scores) {
      (void)id;
      true_mean += s;
    }
    true_mean /= static_cast<double>(panel.true_scores.size());
    for (const auto& [id, s] : panel.true_scores) {
      fitted.push_back(fit.scores.at(id));
      truth.push_back(s - true_mean);
    }
    m.recovery_spearman = spearman(fitted, truth);
    double ss = 0.0;
    for (size_t i = 0; i < fitted.size(); ++i) {
      ss += (fitted[i] - truth[i]) * (fitted[i] - truth[i]);
    }
    m.recovery_rmse = std::sqrt(ss / static_cast<double>(fitted.size()));
  }

  const std::vector<ComparisonRecord> q_records =
      query_records(queries, panel, gateway);

  {
    const WinRateReport report = persona_win_rates(q_records);
    std::vector<double> rates, truth;
    for (const auto& [persona_id, entry] : report.by_persona) {
      rates.push_back(entry.rate);
      truth.push_back(panel.true_scores.at(persona_id));
    }
    m.winrate_spearman = spearman(rates, truth);
    m.winrate_min = *std::min_element(rates.begin(), rates.end());
    m.winrate_max = *std::max_element(rates.begin(), rates.end());
  }

  std::map<std::string, double> batch_map;
  for (const auto& paper : queries.papers) {
    QueryEvidence evidence;
    evidence.paper_id = paper.id;
    evidence.prior_mean = scenario.prior.prior_mean;
    evidence.prior_std = scenario.prior.prior_std;
    for (const auto& r : q_records) {
      if (r.item_a.paper_id != paper.id) continue;
      evidence.outcomes.emplace_back(*r.item_b.persona_id,
                                     r.winning_item().is_original());
    }
    batch_map[paper.id] = map_score(evidence, fit.scores).score;
  }

  {
    std::vector<ComparisonRecord> all_records = cal_records;
    all_records.insert(all_records.end(), q_records.begin(), q_records.end());
    SubsetRobustnessOptions options;
    options.trials = scenario.robustness_trials;
    options.rng_seed = mix_seed(seed, 4);
    options.fit = scenario.fit;
    options.prior = scenario.prior;
    const SubsetRobustnessResult robustness =
        subset_robustness(all_records, panel.personas, options);
    m.robustness_mean_spearman = robustness.mean();
    m.robustness_skipped = static_cast<double>(robustness.skipped_trials);
  }

  {
    std::vector<Persona> calibrated = panel.personas;
    for (auto& p : calibrated) p.calibrated_score = fit.scores.at(p.id);

    ReplayJudge replay(q_records);
    AdaptiveOptions options;
    options.prior_mean = scenario.prior.prior_mean;
    options.prior_std = scenario.prior.prior_std;
    options.stop_std = scenario.adaptive_stop_std;
    options.max_comparisons = scenario.adaptive_max_comparisons > 0
                                  ? scenario.adaptive_max_comparisons
                                  : scenario.panel_size;

    double total_comparisons = 0.0;
    double total_dev = 0.0;
    for (const auto& paper : queries.papers) {
      const AdaptiveResult result = adaptive_score(
          paper, calibrated, replay,
          [](const std::string& paper_id, const std::string& persona_id) {
            return synthetic_counterfactual_text(paper_id, persona_id);
          },
          options);
      total_comparisons += static_cast<double>(result.records.size());
      total_dev += std::abs(result.posterior.mean - batch_map.at(paper.id));
    }
    m.adaptive_mean_comparisons =
        total_comparisons / static_cast<double>(queries.papers.size());
    m.adaptive_mean_abs_dev =
        total_dev / static_cast<double>(queries.papers.size());
  }

  m.judge_calls = static_cast<double>(backend->calls());
  return m;
}

ScenarioResult run_scenario(const Scenario& scenario) {
  if (scenario.num_seeds < 1) {
    throw InvalidArgumentError("scenario: num_seeds must be at least 1");
  }
  ScenarioResult result;
  result.scenario = scenario;
  for (int i = 0; i < scenario.num_seeds; ++i) {
    result.per_seed.push_back(run_seed(scenario, scenario.seed + i));
  }
  return result;
}

SeedMetrics ScenarioResult::averages() const {
  SeedMetrics avg;
  if (per_seed.empty()) return avg;
  const double n = static_cast<double>(per_seed.size());
  for (const auto& m : per_seed) {
    avg.recovery_spearman += m.recovery_spearman / n;
    avg.recovery_rmse += m.recovery_rmse / n;
    avg.robustness_mean_spearman += m.robustness_mean_spearman / n;
    avg.robustness_skipped += m.robustness_skipped / n;
    avg.winrate_spearman += m.winrate_spearman / n;
    avg.winrate_min += m.winrate_min / n;
    avg.winrate_max += m.winrate_max / n;
    avg.adaptive_mean_comparisons += m.adaptive_mean_comparisons / n;
    avg.adaptive_mean_abs_dev += m.adaptive_mean_abs_dev / n;
    avg.judge_calls += m.judge_calls / n;
  }
  return avg;
}

std::string metrics_csv(const ScenarioResult& result) {
  static const std::vector<
      std::pair<std::string, double SeedMetrics::*>>
      columns = {
          {"recovery_spearman", &SeedMetrics::recovery_spearman},
          {"recovery_rmse", &SeedMetrics::recovery_rmse},
          {"robustness_mean_spearman", &SeedMetrics::robustness_mean_spearman},
          {"robustness_skipped", &SeedMetrics::robustness_skipped},
          {"winrate_spearman", &SeedMetrics::winrate_spearman},
          {"winrate_min", &SeedMetrics::winrate_min},
          {"winrate_max", &SeedMetrics::winrate_max},
          {"adaptive_mean_comparisons", &SeedMetrics::adaptive_mean_comparisons},
          {"adaptive_mean_abs_dev", &SeedMetrics::adaptive_mean_abs_dev},
          {"judge_calls", &SeedMetrics::judge_calls},
      };

  std::ostringstream out;
  out << "seed,metric,value\n";
  for (const auto& m : result.per_seed) {
    for (const auto& [name, member] : columns) {
      out << m.seed << ',' << name << ',' << format_double(m.*member) << '\n';
    }
  }
  const SeedMetrics avg = result.averages();
  for (const auto& [name, member] : columns) {
    out << "mean," << name << ',' << format_double(avg.*member) << '\n';
  }
  return out.str();
}

}  // namespace rhetor::sim
