#include "rhetor/query.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "rhetor/errors.hpp"

namespace rhetor {

namespace {

// log(logistic(z)) without overflow on either tail.
double log_sigmoid(double z) {
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

double panel_score(const PanelScores& panel_scores, const std::string& id) {
  const auto it = panel_scores.find(id);
  if (it == panel_scores.end()) {
    throw DataIntegrityError("query evidence references persona '" + id +
                             "' absent from the calibrated panel");
  }
  return it->second;
}

// Summary statistics of a normalized grid density. The density integrates
// to one in the Riemann sense; moments and quantiles use the trapezoid rule
// over the same points, self-normalized so the two conventions agree.
void summarize(Posterior& p) {
  const size_t n = p.grid.size();
  const double dx = p.spacing();
  std::vector<double> density(n);
  for (size_t i = 0; i < n; ++i) density[i] = std::exp(p.log_density[i]);

  auto trapezoid = [&](auto&& weight) {
    double sum = 0.0;
    for (size_t i = 0; i + 1 < n; ++i) {
      sum += 0.5 * (weight(i) + weight(i + 1));
    }
    return sum * dx;
  };

  const double total = trapezoid([&](size_t i) { return density[i]; });
  p.mean = trapezoid([&](size_t i) { return density[i] * p.grid[i]; }) / total;
  p.variance = trapezoid([&](size_t i) {
                 const double d = p.grid[i] - p.mean;
                 return density[i] * d * d;
               }) /
               total;

  auto quantile = [&](double q) {
    const double target = q * total;
    double cum = 0.0;
    for (size_t i = 0; i + 1 < n; ++i) {
      const double seg = 0.5 * (density[i] + density[i + 1]) * dx;
      if (cum + seg >= target) {
        const double t = seg > 0.0 ? (target - cum) / seg : 0.0;
        return p.grid[i] + t * dx;
      }
      cum += seg;
    }
    return p.grid.back();
  };

  p.median = quantile(0.5);
  p.credible_interval_95 = {quantile(0.025), quantile(0.975)};
}

// Renormalizes log densities so that sum(exp(ld)) * dx == 1, then refreshes
// the summary statistics.
void normalize(Posterior& p) {
  const double dx = p.spacing();
  const double m = *std::max_element(p.log_density.begin(), p.log_density.end());
  double sum = 0.0;
  for (double ld : p.log_density) sum += std::exp(ld - m);
  const double log_z = m + std::log(sum) + std::log(dx);
  for (double& ld : p.log_density) ld -= log_z;
  summarize(p);
}

}  // namespace

void QueryEvidence::validate() const {
  if (!(prior_std > 0.0) || !std::isfinite(prior_std)) {
    throw InvalidArgumentError("query evidence: prior_std must be positive");
  }
  if (!std::isfinite(prior_mean)) {
    throw InvalidArgumentError("query evidence: non-finite prior_mean");
  }
  std::set<std::string> seen;
  for (const auto& [pid, won] : outcomes) {
    (void)won;
    if (!seen.insert(pid).second) {
      throw InvalidArgumentError(
          "query evidence: duplicate outcome for persona '" + pid + "'");
    }
  }
}

double log_posterior(double s_q, const QueryEvidence& evidence,
                     const PanelScores& panel_scores) {
  double lp = 0.0;
  for (const auto& [pid, won] : evidence.outcomes) {
    const double s_k = panel_score(panel_scores, pid);
    lp += won ? log_sigmoid(s_q - s_k) : log_sigmoid(s_k - s_q);
  }
  const double d = s_q - evidence.prior_mean;
  return lp - d * d / (2.0 * evidence.prior_std * evidence.prior_std);
}

double log_posterior_gradient(double s_q, const QueryEvidence& evidence,
                              const PanelScores& panel_scores) {
  double g = 0.0;
  for (const auto& [pid, won] : evidence.outcomes) {
    const double p = bt_win_probability(s_q, panel_score(panel_scores, pid));
    g += (won ? 1.0 : 0.0) - p;
  }
  return g - (s_q - evidence.prior_mean) /
                 (evidence.prior_std * evidence.prior_std);
}

double log_posterior_curvature(double s_q, const QueryEvidence& evidence,
                               const PanelScores& panel_scores) {
  double h = 0.0;
  for (const auto& [pid, won] : evidence.outcomes) {
    (void)won;
    const double p = bt_win_probability(s_q, panel_score(panel_scores, pid));
    h -= p * (1.0 - p);
  }
  return h - 1.0 / (evidence.prior_std * evidence.prior_std);
}

MapScore map_score(const QueryEvidence& evidence,
                   const PanelScores& panel_scores) {
  evidence.validate();
  if (evidence.outcomes.empty()) {
    return MapScore{evidence.prior_mean, evidence.prior_std, true};
  }

  const auto grad = [&](double s) {
    return log_posterior_gradient(s, evidence, panel_scores);
  };

  // The gradient is strictly decreasing, so a sign-bracketing interval
  // always exists; the prior term guarantees it within a bounded expansion.
  double lo = evidence.prior_mean, hi = evidence.prior_mean;
  double step = std::max(1.0, evidence.prior_std);
  while (grad(lo) <= 0.0) lo -= step, step *= 2.0;
  step = std::max(1.0, evidence.prior_std);
  while (grad(hi) >= 0.0) hi += step, step *= 2.0;

  double s = 0.5 * (lo + hi);
  for (int iter = 0; iter < 200; ++iter) {
    const double g = grad(s);
    if (std::abs(g) < 1e-10) break;
    if (g > 0.0) {
      lo = s;
    } else {
      hi = s;
    }
    const double h = log_posterior_curvature(s, evidence, panel_scores);
    double next = s - g / h;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == s) break;  // double resolution reached
    s = next;
  }

  const double h = log_posterior_curvature(s, evidence, panel_scores);
  return MapScore{s, std::sqrt(-1.0 / h), false};
}

GridSpec GridSpec::covering(const PanelScores& panel_scores, double prior_mean,
                            double prior_std, double step) {
  if (!(step > 0.0)) {
    throw InvalidArgumentError("grid: step must be positive");
  }
  if (!(prior_std > 0.0)) {
    throw InvalidArgumentError("grid: prior_std must be positive");
  }
  double lo = prior_mean, hi = prior_mean;
  for (const auto& [id, s] : panel_scores) {
    (void)id;
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  lo -= 4.0 * prior_std;
  hi += 4.0 * prior_std;

  GridSpec spec;
  spec.lo = std::floor(lo / step) * step;
  spec.points = static_cast<int>(std::ceil((hi - spec.lo) / step)) + 1;
  spec.hi = spec.lo + step * (spec.points - 1);
  return spec;
}

std::vector<double> GridSpec::values() const {
  if (points < 2 || !(hi > lo)) {
    throw InvalidArgumentError("grid: need at least 2 increasing points");
  }
  std::vector<double> xs(points);
  const double dx = (hi - lo) / static_cast<double>(points - 1);
  for (int i = 0; i < points; ++i) xs[i] = lo + dx * i;
  return xs;
}

Posterior gaussian_prior_posterior(const GridSpec& grid, double mean,
                                   double stddev) {
  if (!(stddev > 0.0) || !std::isfinite(stddev) || !std::isfinite(mean)) {
    throw InvalidArgumentError("prior: mean must be finite, stddev positive");
  }
  Posterior p;
  p.grid = grid.values();
  p.log_density.resize(p.grid.size());
  for (size_t i = 0; i < p.grid.size(); ++i) {
    const double d = p.grid[i] - mean;
    p.log_density[i] = -d * d / (2.0 * stddev * stddev);
  }
  normalize(p);
  return p;
}

Posterior posterior_update(const Posterior& prior, double persona_score,
                           bool won) {
  if (prior.grid.size() < 2) {
    throw InvalidArgumentError("posterior_update: degenerate grid");
  }
  if (!std::isfinite(persona_score)) {
    throw InvalidArgumentError("posterior_update: non-finite persona score");
  }
  Posterior next = prior;
  double max_ld = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < next.grid.size(); ++i) {
    const double z = won ? next.grid[i] - persona_score
                         : persona_score - next.grid[i];
    next.log_density[i] += log_sigmoid(z);
    max_ld = std::max(max_ld, next.log_density[i]);
  }
  if (max_ld < -700.0) {
    throw NumericDegeneracyError(
        "posterior_update: posterior mass underflowed everywhere on the grid");
  }
  normalize(next);
  return next;
}

AdaptiveResult adaptive_score(const PaperItem& paper,
                              const std::vector<Persona>& panel,
                              PairwiseJudge& judge,
                              const CounterfactualTextLookup& texts,
                              const AdaptiveOptions& options) {
  paper.validate();
  if (panel.empty()) {
    throw InvalidArgumentError("adaptive_score: empty panel");
  }
  if (options.max_comparisons < 1) {
    throw InvalidArgumentError("adaptive_score: max_comparisons must be >= 1");
  }
  if (!(options.stop_std > 0.0)) {
    throw InvalidArgumentError("adaptive_score: stop_std must be positive");
  }
  if (!texts) {
    throw InvalidArgumentError("adaptive_score: no counterfactual text lookup");
  }

  PanelScores scores;
  for (const auto& persona : panel) {
    if (!persona.calibrated_score) {
      throw DataIntegrityError("adaptive_score: persona '" + persona.id +
                               "' has no calibrated score");
    }
    if (!scores.emplace(persona.id, *persona.calibrated_score).second) {
      throw InvalidArgumentError("adaptive_score: duplicate persona id " +
                                 persona.id);
    }
  }

  const GridSpec grid =
      options.grid ? *options.grid
                   : GridSpec::covering(scores, options.prior_mean,
                                        options.prior_std);
  AdaptiveResult result;
  result.posterior =
      gaussian_prior_posterior(grid, options.prior_mean, options.prior_std);

  std::set<std::string> used;
  while (static_cast<int>(result.records.size()) < options.max_comparisons &&
         used.size() < scores.size()) {
    // Nearest unused persona to the current posterior median, ties to the
    // lower id.
    const std::string* pick = nullptr;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [pid, s_k] : scores) {
      if (used.count(pid)) continue;
      const double d = std::abs(s_k - result.posterior.median);
      if (d < best) {
        best = d;
        pick = &pid;
      }
    }
    const std::string persona_id = *pick;
    used.insert(persona_id);

    JudgeRequest request;
    request.paper_id = paper.id;
    request.item_a = ItemRef::original(paper.id);
    request.item_b = ItemRef::persona(paper.id, persona_id);
    request.text_a = paper.original_abstract;
    request.text_b = texts(paper.id, persona_id);
    request.template_id = options.template_id;

    ComparisonRecord record;
    try {
      record = judge.judge_pair(request);
    } catch (const TransportExhaustedError& e) {
      throw PartialResultError(
          std::string("judge transport exhausted mid-sequence: ") + e.what(),
          std::move(result));
    } catch (const JudgeProtocolError& e) {
      throw PartialResultError(
          std::string("judge protocol failure mid-sequence: ") + e.what(),
          std::move(result));
    }

    const bool won = record.winning_item().is_original();
    result.posterior =
        posterior_update(result.posterior, scores.at(persona_id), won);
    result.records.push_back(std::move(record));

    if (result.posterior.stddev() < options.stop_std) break;
  }
  return result;
}

}  // namespace rhetor
