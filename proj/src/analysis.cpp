#include "rhetor/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "rhetor/util.hpp"

namespace rhetor {

namespace {

std::vector<double> average_ranks(const std::vector<double>& values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return values[a] < values[b]; });

  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

double sample_stddev(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace

WinRateReport persona_win_rates(const std::vector<ComparisonRecord>& records,
                                const std::vector<std::string>& panel_ids) {
  WinRateReport report;
  report.total_records = static_cast<long long>(records.size());

  for (const auto& r : records) {
    const bool a_orig = r.item_a.is_original();
    const bool b_orig = r.item_b.is_original();
    if (a_orig == b_orig) {
      throw DataIntegrityError(
          "win rates: record for paper " + r.item_a.paper_id +
          " is not an original-vs-persona comparison");
    }
    const std::string& pid =
        a_orig ? *r.item_b.persona_id : *r.item_a.persona_id;
    auto& entry = report.by_persona[pid];
    ++entry.comparisons;
    if (!r.winning_item().is_original()) ++entry.wins;
  }

  for (auto& [pid, entry] : report.by_persona) {
    (void)pid;
    entry.rate = static_cast<double>(entry.wins) /
                 static_cast<double>(entry.comparisons);
  }
  for (const auto& pid : panel_ids) {
    if (!report.by_persona.count(pid)) {
      report.personas_without_comparisons.push_back(pid);
    }
  }
  std::sort(report.personas_without_comparisons.begin(),
            report.personas_without_comparisons.end());
  return report;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) {
    throw InvalidArgumentError("spearman: length mismatch");
  }
  if (x.size() < 3) {
    throw InvalidArgumentError("spearman: need at least 3 observations");
  }
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;

  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double dx = rx[i] - mean;
    const double dy = ry[i] - mean;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw InvalidArgumentError("spearman: constant vector has no ranking");
  }
  return sxy / std::sqrt(sxx * syy);
}

std::set<std::string> load_lexicon_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open lexicon file: " + path.string());
  std::set<std::string> lexicon;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    size_t b = 0, e = line.size();
    while (b < e && std::isspace(static_cast<unsigned char>(line[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(line[e - 1]))) --e;
    if (b == e || line[b] == '#') continue;
    std::string word = line.substr(b, e - b);
    std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) {
      return static_cast<char>(std::tolower(c));
    });
    lexicon.insert(std::move(word));
  }
  return lexicon;
}

double promotion_score(const std::string& abstract_text,
                       const std::set<std::string>& lexicon) {
  long long words = 0, matches = 0;
  size_t i = 0;
  while (i < abstract_text.size()) {
    while (i < abstract_text.size() &&
           std::isspace(static_cast<unsigned char>(abstract_text[i]))) {
      ++i;
    }
    size_t j = i;
    while (j < abstract_text.size() &&
           !std::isspace(static_cast<unsigned char>(abstract_text[j]))) {
      ++j;
    }
    if (j > i) {
      size_t b = i, e = j;
      while (b < e && !std::isalnum(static_cast<unsigned char>(abstract_text[b]))) ++b;
      while (e > b && !std::isalnum(static_cast<unsigned char>(abstract_text[e - 1]))) --e;
      if (e > b) {
        ++words;
        std::string token = abstract_text.substr(b, e - b);
        std::transform(token.begin(), token.end(), token.begin(),
                       [](unsigned char c) {
                         return static_cast<char>(std::tolower(c));
                       });
        if (lexicon.count(token)) ++matches;
      }
    }
    i = j;
  }
  if (words == 0) {
    throw InvalidArgumentError("promotion score: abstract contains no words");
  }
  return static_cast<double>(matches) / static_cast<double>(words);
}

std::vector<GroupSummary> score_summary(
    const std::vector<ScoredItem>& items,
    const std::optional<std::string>& group_by) {
  if (items.empty()) {
    throw InvalidArgumentError("score summary: no scored items");
  }

  std::map<std::string, std::vector<double>> groups;
  if (!group_by) {
    auto& all = groups[""];
    for (const auto& item : items) all.push_back(item.score);
  } else {
    for (const auto& item : items) {
      const auto it = item.metadata.find(*group_by);
      if (it == item.metadata.end()) {
        throw InvalidArgumentError("score summary: paper " + item.paper_id +
                                   " has no metadata key '" + *group_by + "'");
      }
      groups[it->second].push_back(item.score);
    }
  }

  std::vector<GroupSummary> out;
  for (auto& [name, values] : groups) {
    std::sort(values.begin(), values.end());
    GroupSummary g;
    g.group = name;
    g.count = static_cast<int>(values.size());
    g.mean = std::accumulate(values.begin(), values.end(), 0.0) /
             static_cast<double>(values.size());
    g.stddev = sample_stddev(values, g.mean);
    const double half =
        1.96 * g.stddev / std::sqrt(static_cast<double>(values.size()));
    g.ci95_low = g.mean - half;
    g.ci95_high = g.mean + half;
    for (int k = 1; k <= 9; ++k) {
      // inverse-ECDF quantile: smallest value with at least k/10 mass below
      const size_t idx = static_cast<size_t>(
          std::ceil(static_cast<double>(values.size()) * k / 10.0)) - 1;
      g.decile_boundaries.push_back(values[idx]);
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<DecileRow> decile_table(const std::vector<double>& scores,
                                    const std::vector<double>* aux) {
  const size_t n = scores.size();
  if (n < 10) {
    throw InvalidArgumentError("decile table: need at least 10 scores");
  }
  if (aux && aux->size() != n) {
    throw InvalidArgumentError("decile table: aux length mismatch");
  }

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  std::vector<DecileRow> rows;
  for (int g = 0; g < 10; ++g) {
    const size_t begin = n * g / 10;
    const size_t end = n * (g + 1) / 10;
    DecileRow row;
    row.group = g;
    row.count = static_cast<int>(end - begin);
    row.range_low = scores[order[begin]];
    row.range_high = scores[order[end - 1]];
    double sum = 0.0, aux_sum = 0.0;
    for (size_t i = begin; i < end; ++i) {
      sum += scores[order[i]];
      if (aux) aux_sum += (*aux)[order[i]];
    }
    row.mean_score = sum / static_cast<double>(row.count);
    if (aux) row.mean_aux = aux_sum / static_cast<double>(row.count);
    rows.push_back(row);
  }
  return rows;
}

std::string scores_to_csv(const std::vector<QueryScore>& scores,
                          const std::vector<PaperItem>& papers) {
  std::unordered_map<std::string, const PaperItem*> by_id;
  for (const auto& p : papers) by_id.emplace(p.id, &p);

  std::ostringstream out;
  out << "paper_id,score,std,year,subfield,wins,losses\n";
  for (const auto& s : scores) {
    std::string year, subfield;
    const auto it = by_id.find(s.paper_id);
    if (it != by_id.end()) {
      const auto& meta = it->second->metadata;
      if (const auto y = meta.find("year"); y != meta.end()) year = y->second;
      if (const auto f = meta.find("subfield"); f != meta.end()) {
        subfield = f->second;
      }
    }
    long long wins = 0, losses = 0;
    for (const auto& [pid, won] : s.comparisons) {
      (void)pid;
      won ? ++wins : ++losses;
    }
    out << csv_escape(s.paper_id) << ',' << format_double(s.score) << ','
        << format_double(s.stddev) << ',' << csv_escape(year) << ','
        << csv_escape(subfield) << ',' << wins << ',' << losses << '\n';
  }
  return out.str();
}

}  // namespace rhetor
