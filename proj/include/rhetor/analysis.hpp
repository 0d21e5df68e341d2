#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rhetor/store.hpp"
#include "rhetor/types.hpp"

namespace rhetor {

struct WinRate {
  double rate = 0.0;
  long long wins = 0;
  long long comparisons = 0;
};

struct WinRateReport {
  std::map<std::string, WinRate> by_persona;
  // Personas present in the panel argument but appearing in no record; they
  // are omitted from by_persona rather than reported as rate 0.
  std::vector<std::string> personas_without_comparisons;
  long long total_records = 0;
};

// Fraction of original-vs-persona comparisons that each persona's
// counterfactual won. Every record must pit an original abstract against a
// persona abstract.
WinRateReport persona_win_rates(const std::vector<ComparisonRecord>& records,
                                const std::vector<std::string>& panel_ids = {});

// Spearman rank correlation with average ranks for ties. Throws
// InvalidArgumentError on length mismatch, length < 3, or a constant vector.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// Loads a lexicon file: one word per line, lowercased, '#' comments and
// blank lines ignored.
std::set<std::string> load_lexicon_file(const std::filesystem::path& path);

// Fraction of abstract tokens found in the lexicon. Case-insensitive;
// punctuation is stripped from token edges, and tokens that are nothing but
// punctuation do not count as words.
double promotion_score(const std::string& abstract_text,
                       const std::set<std::string>& lexicon);

struct GroupSummary {
  std::string group;  // "" when ungrouped
  int count = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  double ci95_low = 0.0;
  double ci95_high = 0.0;
  std::vector<double> decile_boundaries;  // empirical 10%..90% quantiles
};

// Scores paired with the metadata used for grouping.
struct ScoredItem {
  std::string paper_id;
  double score = 0.0;
  double stddev = 0.0;
  std::map<std::string, std::string> metadata;
};

// Descriptive statistics, optionally grouped by a metadata key (groups
// ordered by key). CI is mean +/- 1.96*std/sqrt(n). Throws
// InvalidArgumentError for empty input or an unknown metadata key.
std::vector<GroupSummary> score_summary(const std::vector<ScoredItem>& items,
                                        const std::optional<std::string>& group_by);

struct DecileRow {
  int group = 0;          // 0 = lowest scores
  double range_low = 0.0;
  double range_high = 0.0;
  double mean_score = 0.0;
  std::optional<double> mean_aux;
  int count = 0;
};

// Ten equally sized groups by score, each with its range and mean; aux, when
// given, is averaged per group (the layout used for usage-by-decile tables).
std::vector<DecileRow> decile_table(const std::vector<double>& scores,
                                    const std::vector<double>* aux = nullptr);

// Tidy per-paper CSV: paper_id, score, std, year, subfield, wins, losses.
std::string scores_to_csv(const std::vector<QueryScore>& scores,
                          const std::vector<PaperItem>& papers);

}  // namespace rhetor
