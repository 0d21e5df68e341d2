#include "rhetor/calibration.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "rhetor/analysis.hpp"
#include "rhetor/errors.hpp"
#include "rhetor/query.hpp"
#include "rhetor/util.hpp"

namespace rhetor {

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ", ";
    out += ids[i];
  }
  return out;
}

// Connected components of the undirected comparison graph.
std::vector<std::vector<int>> comparison_components(const PairCountMatrix& m) {
  const int k = static_cast<int>(m.size());
  std::vector<int> component(k, -1);
  std::vector<std::vector<int>> groups;
  for (int start = 0; start < k; ++start) {
    if (component[start] != -1) continue;
    const int label = static_cast<int>(groups.size());
    groups.emplace_back();
    std::vector<int> stack{start};
    component[start] = label;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      groups[label].push_back(i);
      for (int j = 0; j < k; ++j) {
        if (component[j] == -1 && m.wins[i][j] + m.wins[j][i] > 0) {
          component[j] = label;
          stack.push_back(j);
        }
      }
    }
  }
  for (auto& g : groups) std::sort(g.begin(), g.end());
  return groups;
}

// Strongly connected components of the directed win graph (edge i->j when i
// beat j at least once), Kosaraju's two passes with explicit stacks.
std::vector<std::vector<int>> win_sccs(const PairCountMatrix& m) {
  const int k = static_cast<int>(m.size());
  std::vector<int> order;
  order.reserve(k);
  std::vector<char> seen(k, 0);
  for (int start = 0; start < k; ++start) {
    if (seen[start]) continue;
    // (node, next neighbor to try)
    std::vector<std::pair<int, int>> stack{{start, 0}};
    seen[start] = 1;
    while (!stack.empty()) {
      auto& [i, next] = stack.back();
      bool descended = false;
      for (int j = next; j < k; ++j) {
        if (!seen[j] && m.wins[i][j] > 0) {
          stack.back().second = j + 1;
          stack.emplace_back(j, 0);
          seen[j] = 1;
          descended = true;
          break;
        }
      }
      if (!descended) {
        order.push_back(i);
        stack.pop_back();
      }
    }
  }

  std::vector<int> scc(k, -1);
  std::vector<std::vector<int>> groups;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (scc[*it] != -1) continue;
    const int label = static_cast<int>(groups.size());
    groups.emplace_back();
    std::vector<int> stack{*it};
    scc[*it] = label;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      groups[label].push_back(i);
      for (int j = 0; j < k; ++j) {
        if (scc[j] == -1 && m.wins[j][i] > 0) {
          scc[j] = label;
          stack.push_back(j);
        }
      }
    }
  }
  for (auto& g : groups) std::sort(g.begin(), g.end());
  return groups;
}

void check_matrix_shape(const PairCountMatrix& m) {
  const size_t k = m.persona_ids.size();
  if (k == 0) throw InvalidArgumentError("fit_bt: empty panel");
  if (m.wins.size() != k) {
    throw InvalidArgumentError("fit_bt: wins matrix is not K x K");
  }
  std::set<std::string> distinct(m.persona_ids.begin(), m.persona_ids.end());
  if (distinct.size() != k) {
    throw InvalidArgumentError("fit_bt: duplicate persona ids");
  }
  for (size_t i = 0; i < k; ++i) {
    if (m.wins[i].size() != k) {
      throw InvalidArgumentError("fit_bt: wins matrix is not K x K");
    }
    if (m.wins[i][i] != 0) {
      throw InvalidArgumentError("fit_bt: nonzero diagonal at " +
                                 m.persona_ids[i]);
    }
    for (size_t j = 0; j < k; ++j) {
      if (m.wins[i][j] < 0) {
        throw InvalidArgumentError("fit_bt: negative win count");
      }
    }
  }
}

}  // namespace

PairCountMatrix PairCountMatrix::zero(std::vector<std::string> ids) {
  PairCountMatrix m;
  m.wins.assign(ids.size(), std::vector<long long>(ids.size(), 0));
  m.persona_ids = std::move(ids);
  return m;
}

long long PairCountMatrix::total() const {
  long long sum = 0;
  for (const auto& row : wins) {
    for (long long w : row) sum += w;
  }
  return sum;
}

PairCountMatrix build_pair_counts(const std::vector<ComparisonRecord>& records,
                                  const std::vector<Persona>& panel) {
  std::vector<std::string> ids;
  ids.reserve(panel.size());
  std::unordered_map<std::string, int> index;
  for (const auto& p : panel) {
    if (!index.emplace(p.id, static_cast<int>(ids.size())).second) {
      throw InvalidArgumentError("build_pair_counts: duplicate persona id " +
                                 p.id);
    }
    ids.push_back(p.id);
  }

  PairCountMatrix m = PairCountMatrix::zero(std::move(ids));
  for (const auto& r : records) {
    if (r.item_a.is_original() || r.item_b.is_original()) {
      throw DataIntegrityError(
          "build_pair_counts: record for paper " + r.item_a.paper_id +
          " pits an original abstract; only persona-vs-persona records "
          "calibrate the panel");
    }
    const auto ia = index.find(*r.item_a.persona_id);
    const auto ib = index.find(*r.item_b.persona_id);
    if (ia == index.end() || ib == index.end()) {
      throw DataIntegrityError("build_pair_counts: unknown persona " +
                               (ia == index.end() ? *r.item_a.persona_id
                                                  : *r.item_b.persona_id));
    }
    if (ia->second == ib->second) {
      throw DataIntegrityError("build_pair_counts: self-comparison for " +
                               ia->first);
    }
    // winner already refers to the caller's labels; the presentation-order
    // bit is audit metadata only.
    const int w = r.winner == Winner::A ? ia->second : ib->second;
    const int l = r.winner == Winner::A ? ib->second : ia->second;
    ++m.wins[w][l];
  }
  return m;
}

BTFit fit_bt(const PairCountMatrix& counts, const FitOptions& options) {
  check_matrix_shape(counts);
  if (options.tolerance <= 0.0) {
    throw InvalidArgumentError("fit_bt: tolerance must be positive");
  }
  if (options.max_iterations < 1) {
    throw InvalidArgumentError("fit_bt: max_iterations must be >= 1");
  }
  if (options.smoothing < 0.0) {
    throw InvalidArgumentError("fit_bt: smoothing must be nonnegative");
  }

  const size_t k = counts.size();
  BTFit fit;
  if (k == 1) {
    fit.scores[counts.persona_ids[0]] = 0.0;
    fit.converged = true;
    return fit;
  }

  const auto components = comparison_components(counts);
  if (components.size() > 1) {
    std::ostringstream msg;
    msg << "panel comparison graph is disconnected; scores cannot share a "
           "scale across components:";
    for (size_t c = 0; c < components.size(); ++c) {
      std::vector<std::string> names;
      for (int i : components[c]) names.push_back(counts.persona_ids[i]);
      msg << " [" << join_ids(names) << "]";
    }
    throw UnidentifiablePanelError(msg.str());
  }

  if (options.smoothing == 0.0) {
    const auto sccs = win_sccs(counts);
    if (sccs.size() > 1) {
      // Condensation sources are never beaten from outside their group, so
      // their likelihood diverges upward; sinks never beat outsiders and
      // diverge downward.
      std::vector<int> scc_of(k, -1);
      for (size_t c = 0; c < sccs.size(); ++c) {
        for (int i : sccs[c]) scc_of[i] = static_cast<int>(c);
      }
      std::vector<char> has_in(sccs.size(), 0), has_out(sccs.size(), 0);
      for (size_t i = 0; i < k; ++i) {
        for (size_t j = 0; j < k; ++j) {
          if (counts.wins[i][j] > 0 && scc_of[i] != scc_of[j]) {
            has_out[scc_of[i]] = 1;
            has_in[scc_of[j]] = 1;
          }
        }
      }
      std::vector<std::string> undominated, dominated;
      for (size_t c = 0; c < sccs.size(); ++c) {
        for (int i : sccs[c]) {
          if (!has_in[c]) undominated.push_back(counts.persona_ids[i]);
          if (!has_out[c]) dominated.push_back(counts.persona_ids[i]);
        }
      }
      std::sort(undominated.begin(), undominated.end());
      std::sort(dominated.begin(), dominated.end());
      std::ostringstream msg;
      msg << "maximum-likelihood scores diverge: the win graph is not "
             "strongly connected (use smoothing > 0 to regularize)."
          << " Undominated: [" << join_ids(undominated) << "]; dominated: ["
          << join_ids(dominated) << "]";
      throw DegenerateMleError(msg.str());
    }
  }

  // Smoothed counts drive the solver; the reported likelihood does not use
  // them.
  const double eps = options.smoothing;
  std::vector<std::vector<double>> w(k, std::vector<double>(k, 0.0));
  std::vector<double> win_sum(k, 0.0);
  for (size_t i = 0; i < k; ++i) {
    for (size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      w[i][j] = static_cast<double>(counts.wins[i][j]) + eps;
      win_sum[i] += w[i][j];
    }
  }

  std::vector<double> log_s(k, 0.0);
  std::vector<double> gamma(k, 1.0);
  int iterations = 0;
  bool converged = false;
  while (iterations < options.max_iterations) {
    ++iterations;
    std::vector<double> next(k);
    for (size_t i = 0; i < k; ++i) {
      double denom = 0.0;
      for (size_t j = 0; j < k; ++j) {
        if (i == j) continue;
        const double n_ij = w[i][j] + w[j][i];
        if (n_ij > 0.0) denom += n_ij / (gamma[i] + gamma[j]);
      }
      next[i] = win_sum[i] / denom;
    }
    std::vector<double> next_log(k);
    double mean_log = 0.0;
    for (size_t i = 0; i < k; ++i) mean_log += std::log(next[i]);
    mean_log /= static_cast<double>(k);
    double delta = 0.0;
    for (size_t i = 0; i < k; ++i) {
      next_log[i] = std::log(next[i]) - mean_log;
      delta = std::max(delta, std::abs(next_log[i] - log_s[i]));
      gamma[i] = std::exp(next_log[i]);
    }
    log_s = std::move(next_log);
    if (delta < options.tolerance) {
      converged = true;
      break;
    }
  }

  // One last centering pass absorbs floating-point drift.
  double mean = std::accumulate(log_s.begin(), log_s.end(), 0.0) /
                static_cast<double>(k);
  double ll = 0.0;
  for (size_t i = 0; i < k; ++i) {
    log_s[i] -= mean;
    fit.scores[counts.persona_ids[i]] = log_s[i];
  }
  for (size_t i = 0; i < k; ++i) {
    for (size_t j = 0; j < k; ++j) {
      if (counts.wins[i][j] > 0) {
        ll += static_cast<double>(counts.wins[i][j]) *
              std::log(bt_win_probability(log_s[i], log_s[j]));
      }
    }
  }
  fit.log_likelihood = ll;
  fit.iterations = iterations;
  fit.converged = converged;
  return fit;
}

double SubsetRobustnessResult::mean() const {
  if (coefficients.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(coefficients.begin(), coefficients.end(), 0.0) /
         static_cast<double>(coefficients.size());
}

SubsetRobustnessResult subset_robustness(
    const std::vector<ComparisonRecord>& records,
    const std::vector<Persona>& panel,
    const SubsetRobustnessOptions& options) {
  const size_t k = panel.size();
  if (k < 4 || k % 2 != 0) {
    throw InvalidArgumentError(
        "subset_robustness: panel size must be even and >= 4, got " +
        std::to_string(k));
  }
  if (options.trials < 1) {
    throw InvalidArgumentError("subset_robustness: trials must be >= 1");
  }

  std::unordered_map<std::string, int> index;
  for (size_t i = 0; i < k; ++i) index.emplace(panel[i].id, static_cast<int>(i));
  if (index.size() != k) {
    throw InvalidArgumentError("subset_robustness: duplicate persona ids");
  }

  // Split the evidence: persona-vs-persona rows refit the halves,
  // original-vs-persona rows re-score the queries.
  struct QueryOutcome {
    int persona = 0;
    bool won = false;  // true when the original beat the counterfactual
  };
  std::vector<ComparisonRecord> calibration;
  std::map<std::string, std::vector<QueryOutcome>> queries;
  for (const auto& r : records) {
    const bool a_orig = r.item_a.is_original();
    const bool b_orig = r.item_b.is_original();
    if (a_orig && b_orig) {
      throw DataIntegrityError(
          "subset_robustness: original-vs-original record for paper " +
          r.item_a.paper_id);
    }
    if (!a_orig && !b_orig) {
      calibration.push_back(r);
      continue;
    }
    const ItemRef& persona_item = a_orig ? r.item_b : r.item_a;
    const auto it = index.find(*persona_item.persona_id);
    if (it == index.end()) {
      throw DataIntegrityError("subset_robustness: unknown persona " +
                               *persona_item.persona_id);
    }
    queries[r.item_a.paper_id].push_back(
        {it->second, r.winning_item().is_original()});
  }

  const int half = static_cast<int>(k) / 2;
  std::vector<std::optional<double>> by_trial(options.trials);

  parallel_for(static_cast<size_t>(options.trials), 8, [&](size_t trial) {
    std::seed_seq seq{
        static_cast<uint32_t>(options.rng_seed),
        static_cast<uint32_t>(options.rng_seed >> 32),
        static_cast<uint32_t>(trial), 0x5b57u};
    std::mt19937_64 rng(seq);
    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);

    std::array<std::vector<int>, 2> halves;
    halves[0].assign(perm.begin(), perm.begin() + half);
    halves[1].assign(perm.begin() + half, perm.end());
    for (auto& h : halves) std::sort(h.begin(), h.end());

    std::array<PanelScores, 2> half_scores;
    std::array<std::vector<Persona>, 2> half_panels;
    for (int s = 0; s < 2; ++s) {
      std::vector<char> member(k, 0);
      for (int i : halves[s]) member[i] = 1;
      for (int i : halves[s]) half_panels[s].push_back(panel[i]);
      std::vector<ComparisonRecord> intra;
      for (const auto& r : calibration) {
        const auto a = index.find(*r.item_a.persona_id);
        const auto b = index.find(*r.item_b.persona_id);
        if (member[a->second] && member[b->second]) intra.push_back(r);
      }
      try {
        const BTFit f =
            fit_bt(build_pair_counts(intra, half_panels[s]), options.fit);
        half_scores[s] = f.scores;
      } catch (const DataIntegrityError&) {
        return;  // half not fittable: trial skipped
      }
    }
    if (half_scores[0].empty() || half_scores[1].empty()) return;

    // Queries with at least one outcome against each half, scored per half.
    std::array<std::vector<double>, 2> vec;
    for (const auto& [paper_id, outcomes] : queries) {
      std::array<QueryEvidence, 2> ev;
      for (int s = 0; s < 2; ++s) {
        ev[s].paper_id = paper_id;
        ev[s].prior_mean = options.prior.prior_mean;
        ev[s].prior_std = options.prior.prior_std;
      }
      for (const auto& o : outcomes) {
        const int side = half_scores[0].count(panel[o.persona].id) ? 0 : 1;
        ev[side].outcomes.emplace_back(panel[o.persona].id, o.won);
      }
      if (ev[0].outcomes.empty() || ev[1].outcomes.empty()) continue;
      for (int s = 0; s < 2; ++s) {
        vec[s].push_back(map_score(ev[s], half_scores[s]).score);
      }
    }
    if (vec[0].size() < 3) return;  // too few shared queries: skipped

    try {
      by_trial[trial] = spearman(vec[0], vec[1]);
    } catch (const InvalidArgumentError&) {
      // constant score vector: skipped
    }
  });

  SubsetRobustnessResult result;
  for (const auto& c : by_trial) {
    if (c) {
      result.coefficients.push_back(*c);
    } else {
      ++result.skipped_trials;
    }
  }
  return result;
}

}  // namespace rhetor
