#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rhetor/types.hpp"

namespace rhetor {

// All-pairs win counts over a panel. wins[i][j] is the number of judged
// comparisons item i beat item j; the diagonal stays zero.
struct PairCountMatrix {
  std::vector<std::string> persona_ids;
  std::vector<std::vector<long long>> wins;

  static PairCountMatrix zero(std::vector<std::string> ids);
  size_t size() const { return persona_ids.size(); }
  long long total() const;
};

// Aggregates judged persona-vs-persona records into a count matrix. The
// winner field already refers to the caller's labels, so no unwinding of
// presented_order_swapped is needed here; the test suite pins that down.
// Throws DataIntegrityError when a record references an unknown persona or
// an original abstract.
PairCountMatrix build_pair_counts(const std::vector<ComparisonRecord>& records,
                                  const std::vector<Persona>& panel);

struct FitOptions {
  double tolerance = 1e-8;
  int max_iterations = 10000;
  // Pseudo-wins added to every ordered pair before fitting. Zero demands a
  // strongly connected win graph; 0.01 is the suggested exploratory value.
  double smoothing = 0.0;
};

// Maximum-likelihood Bradley-Terry scores via the minorization-maximization
// fixed point, re-centered to sum to zero. log_likelihood is evaluated at the
// unsmoothed counts.
//
// Throws UnidentifiablePanelError when the comparison graph is disconnected
// and DegenerateMleError when smoothing is zero and some persona never wins
// or never loses.
BTFit fit_bt(const PairCountMatrix& counts, const FitOptions& options = {});

struct QueryPriorOptions {
  double prior_mean = 0.0;
  double prior_std = 3.0;
};

struct SubsetRobustnessOptions {
  int trials = 1000;
  uint64_t rng_seed = 0;
  FitOptions fit;
  QueryPriorOptions prior;
};

struct SubsetRobustnessResult {
  // One Spearman coefficient per completed trial, in trial order.
  std::vector<double> coefficients;
  // Trials whose half-panels could not be fitted (or left fewer than three
  // shared query items); skipped, never silently dropped.
  int skipped_trials = 0;

  double mean() const;
};

// Complementary-subset check: split the panel into two random halves, refit
// each half from its intra-half records, re-score every query paper against
// both halves by MAP, and correlate the two score vectors.
//
// records must mix persona-vs-persona rows (calibration evidence) and
// original-vs-persona rows (query evidence). Panel size must be even and
// at least 4.
SubsetRobustnessResult subset_robustness(
    const std::vector<ComparisonRecord>& records,
    const std::vector<Persona>& panel, const SubsetRobustnessOptions& options);

}  // namespace rhetor
