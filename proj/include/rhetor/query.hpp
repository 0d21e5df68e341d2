#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rhetor/judge.hpp"
#include "rhetor/types.hpp"

namespace rhetor {

using PanelScores = std::map<std::string, double>;

// Win/loss vector of one query abstract against the calibrated panel, plus
// the Gaussian prior placed on its score.
struct QueryEvidence {
  std::string paper_id;
  std::vector<std::pair<std::string, bool>> outcomes;  // (persona_id, won)
  double prior_mean = 0.0;
  double prior_std = 3.0;

  void validate() const;  // distinct persona ids, positive prior_std
};

// Log-posterior of the query score: Bradley-Terry log-likelihood of the
// outcomes plus the Gaussian log-prior. The constant -0.5*log(2*pi*std^2)
// normalizer is omitted throughout.
double log_posterior(double s_q, const QueryEvidence& evidence,
                     const PanelScores& panel_scores);
double log_posterior_gradient(double s_q, const QueryEvidence& evidence,
                              const PanelScores& panel_scores);
// Second derivative; strictly negative everywhere, which is what makes the
// MAP unique.
double log_posterior_curvature(double s_q, const QueryEvidence& evidence,
                               const PanelScores& panel_scores);

struct MapScore {
  double score = 0.0;
  double stddev = 0.0;  // Laplace approximation: sqrt(-1 / curvature)
  bool prior_only = false;
};

// Unique maximizer of log_posterior, found by safeguarded Newton with a
// bisection fallback to |gradient| < 1e-10. Finite even when the query wins
// or loses every comparison. Empty evidence returns the prior, flagged.
MapScore map_score(const QueryEvidence& evidence, const PanelScores& panel_scores);

// Uniform score grid. Defaults give resolution 0.01 on [-8, 8].
struct GridSpec {
  double lo = -8.0;
  double hi = 8.0;
  int points = 1601;

  // Smallest grid at ~0.01 spacing covering
  // [min(panel) - 4*prior_std, max(panel) + 4*prior_std].
  static GridSpec covering(const PanelScores& panel_scores, double prior_mean,
                           double prior_std, double step = 0.01);

  std::vector<double> values() const;
};

// Discretized N(mean, std^2) prior on the grid.
Posterior gaussian_prior_posterior(const GridSpec& grid, double mean, double stddev);

// One Bayesian update: multiply by the Bradley-Terry likelihood of the
// observed outcome against a persona at persona_score, renormalize, and
// recompute the summary statistics. Throws NumericDegeneracyError if every
// grid point underflows (log density < -700 before renormalization).
Posterior posterior_update(const Posterior& prior, double persona_score, bool won);

struct AdaptiveOptions {
  double prior_mean = 0.0;
  double prior_std = 3.0;
  double stop_std = 0.5;
  int max_comparisons = 30;
  // When absent, GridSpec::covering the panel is used.
  std::optional<GridSpec> grid;
  std::string template_id = "pairwise_v1";
};

struct AdaptiveResult {
  Posterior posterior;
  std::vector<ComparisonRecord> records;
};

// Raised when the judge fails mid-sequence; carries the progress so far.
class PartialResultError : public Error {
 public:
  PartialResultError(const std::string& message, AdaptiveResult partial)
      : Error(message), partial(std::move(partial)) {}

  AdaptiveResult partial;
};

// Resolves the counterfactual text for (paper_id, persona_id).
using CounterfactualTextLookup =
    std::function<std::string(const std::string& paper_id,
                              const std::string& persona_id)>;

// Sequential scoring of one query abstract: always judge once, then keep
// picking the unused persona whose calibrated score is nearest the posterior
// median (ties to the lower persona id) until the posterior std falls below
// stop_std, personas run out, or max_comparisons is hit.
AdaptiveResult adaptive_score(const PaperItem& paper,
                              const std::vector<Persona>& panel,
                              PairwiseJudge& judge,
                              const CounterfactualTextLookup& texts,
                              const AdaptiveOptions& options);

}  // namespace rhetor
