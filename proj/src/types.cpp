#include "rhetor/types.hpp"

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>

namespace rhetor {

int word_count(std::string_view text) {
  int count = 0;
  bool in_token = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      ++count;
    }
  }
  return count;
}

double bt_win_probability(double s_a, double s_b) {
  if (!std::isfinite(s_a) || !std::isfinite(s_b)) {
    throw InvalidArgumentError("bt_win_probability: non-finite score");
  }
  const double d = s_a - s_b;
  if (d >= 0.0) {
    return 1.0 / (1.0 + std::exp(-d));
  }
  const double e = std::exp(d);
  return e / (1.0 + e);
}

std::string rfc3339_utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec);
  return buf;
}

void PaperItem::validate() const {
  if (id.empty()) throw ValidationError("paper: empty id");
  if (substantive_content.empty()) {
    throw ValidationError("paper " + id + ": empty substantive_content");
  }
  if (abstract_word_count <= 0) {
    throw ValidationError("paper " + id + ": abstract_word_count must be positive");
  }
  if (abstract_word_count != word_count(original_abstract)) {
    throw ValidationError("paper " + id +
                          ": abstract_word_count does not match original_abstract");
  }
}

void Persona::validate() const {
  if (id.empty()) throw ValidationError("persona: empty id");
  if (system_prompt.empty()) {
    throw ValidationError("persona " + id + ": empty system_prompt");
  }
  if (calibrated_score && !std::isfinite(*calibrated_score)) {
    throw ValidationError("persona " + id + ": non-finite calibrated_score");
  }
}

void CounterfactualAbstract::validate() const {
  if (paper_id.empty() || persona_id.empty()) {
    throw ValidationError("counterfactual: empty paper_id or persona_id");
  }
  if (text.empty()) {
    throw ValidationError("counterfactual " + paper_id + "/" + persona_id +
                          ": empty text");
  }
  if (word_count <= 0 || word_count != rhetor::word_count(text)) {
    throw ValidationError("counterfactual " + paper_id + "/" + persona_id +
                          ": word_count does not match text");
  }
  if (generation_attempt < 1) {
    throw ValidationError("counterfactual: generation_attempt must be >= 1");
  }
}

void ComparisonRecord::validate() const {
  if (item_a == item_b) {
    throw ValidationError("comparison: item_a equals item_b");
  }
  if (item_a.paper_id != item_b.paper_id) {
    throw ValidationError("comparison: items derive from different papers (" +
                          item_a.paper_id + " vs " + item_b.paper_id + ")");
  }
  if (judge_id.empty()) throw ValidationError("comparison: empty judge_id");
  if (timestamp.empty()) throw ValidationError("comparison: empty timestamp");
}

void BTFit::validate() const {
  double sum = 0.0;
  for (const auto& [id, s] : scores) {
    if (!std::isfinite(s)) throw ValidationError("fit: non-finite score for " + id);
    sum += s;
  }
  if (std::abs(sum) > 1e-9) {
    throw ValidationError("fit: scores do not sum to zero");
  }
  if (log_likelihood > 0.0) {
    throw ValidationError("fit: positive log-likelihood");
  }
}

double Posterior::stddev() const { return std::sqrt(variance); }

double Posterior::spacing() const {
  return grid.size() > 1 ? (grid.back() - grid.front()) / double(grid.size() - 1)
                         : 0.0;
}

void Posterior::validate() const {
  if (grid.size() < 2 || grid.size() != log_density.size()) {
    throw ValidationError("posterior: grid/log_density size mismatch");
  }
  for (size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) {
      throw ValidationError("posterior: grid not strictly increasing");
    }
  }
  double mass = 0.0;
  const double dx = spacing();
  for (double ld : log_density) mass += std::exp(ld) * dx;
  if (std::abs(mass - 1.0) > 1e-9) {
    throw ValidationError("posterior: density mass " + std::to_string(mass));
  }
  if (variance < 0.0) throw ValidationError("posterior: negative variance");
  if (!(credible_interval_95.first <= median &&
        median <= credible_interval_95.second)) {
    throw ValidationError("posterior: median outside credible interval");
  }
}

namespace {

std::string winner_to_string(Winner w) { return w == Winner::A ? "A" : "B"; }

Winner winner_from_string(const std::string& s) {
  if (s == "A") return Winner::A;
  if (s == "B") return Winner::B;
  throw ValidationError("comparison: winner must be \"A\" or \"B\", got \"" + s + "\"");
}

}  // namespace

void to_json(nlohmann::json& j, const PaperItem& p) {
  j = nlohmann::json{{"id", p.id},
                     {"substantive_content", p.substantive_content},
                     {"original_abstract", p.original_abstract},
                     {"abstract_word_count", p.abstract_word_count},
                     {"metadata", p.metadata}};
}

void from_json(const nlohmann::json& j, PaperItem& p) {
  j.at("id").get_to(p.id);
  j.at("substantive_content").get_to(p.substantive_content);
  j.at("original_abstract").get_to(p.original_abstract);
  j.at("abstract_word_count").get_to(p.abstract_word_count);
  p.metadata = j.value("metadata", std::map<std::string, std::string>{});
}

void to_json(nlohmann::json& j, const Persona& p) {
  j = nlohmann::json{{"id", p.id},
                     {"display_name", p.display_name},
                     {"system_prompt", p.system_prompt}};
  if (p.calibrated_score) j["calibrated_score"] = *p.calibrated_score;
}

void from_json(const nlohmann::json& j, Persona& p) {
  j.at("id").get_to(p.id);
  p.display_name = j.value("display_name", p.id);
  j.at("system_prompt").get_to(p.system_prompt);
  if (j.contains("calibrated_score") && !j["calibrated_score"].is_null()) {
    p.calibrated_score = j["calibrated_score"].get<double>();
  } else {
    p.calibrated_score.reset();
  }
}

void to_json(nlohmann::json& j, const CounterfactualAbstract& c) {
  j = nlohmann::json{{"paper_id", c.paper_id},
                     {"persona_id", c.persona_id},
                     {"text", c.text},
                     {"word_count", c.word_count},
                     {"generation_attempt", c.generation_attempt}};
}

void from_json(const nlohmann::json& j, CounterfactualAbstract& c) {
  j.at("paper_id").get_to(c.paper_id);
  j.at("persona_id").get_to(c.persona_id);
  j.at("text").get_to(c.text);
  j.at("word_count").get_to(c.word_count);
  c.generation_attempt = j.value("generation_attempt", 1);
}

void to_json(nlohmann::json& j, const ItemRef& r) {
  j = nlohmann::json{{"paper_id", r.paper_id}};
  if (r.persona_id) {
    j["persona_id"] = *r.persona_id;
  } else {
    j["persona_id"] = nullptr;
  }
}

void from_json(const nlohmann::json& j, ItemRef& r) {
  j.at("paper_id").get_to(r.paper_id);
  if (j.contains("persona_id") && !j["persona_id"].is_null()) {
    r.persona_id = j["persona_id"].get<std::string>();
  } else {
    r.persona_id.reset();
  }
}

void to_json(nlohmann::json& j, const ComparisonRecord& r) {
  j = nlohmann::json{{"item_a", r.item_a},
                     {"item_b", r.item_b},
                     {"winner", winner_to_string(r.winner)},
                     {"judge_id", r.judge_id},
                     {"presented_order_swapped", r.presented_order_swapped},
                     {"rationale", r.rationale},
                     {"timestamp", r.timestamp}};
}

void from_json(const nlohmann::json& j, ComparisonRecord& r) {
  j.at("item_a").get_to(r.item_a);
  j.at("item_b").get_to(r.item_b);
  r.winner = winner_from_string(j.at("winner").get<std::string>());
  j.at("judge_id").get_to(r.judge_id);
  j.at("presented_order_swapped").get_to(r.presented_order_swapped);
  r.rationale = j.value("rationale", "");
  j.at("timestamp").get_to(r.timestamp);
}

void to_json(nlohmann::json& j, const BTFit& f) {
  j = nlohmann::json{{"constraint", "sum_zero"},
                     {"scores", f.scores},
                     {"log_likelihood", f.log_likelihood},
                     {"iterations", f.iterations},
                     {"converged", f.converged}};
}

void from_json(const nlohmann::json& j, BTFit& f) {
  const std::string constraint = j.value("constraint", "sum_zero");
  if (constraint != "sum_zero") {
    throw ValidationError("fit: unsupported identifiability constraint \"" +
                          constraint + "\"");
  }
  f.scores = j.at("scores").get<std::map<std::string, double>>();
  j.at("log_likelihood").get_to(f.log_likelihood);
  j.at("iterations").get_to(f.iterations);
  j.at("converged").get_to(f.converged);
}

void to_json(nlohmann::json& j, const Posterior& p) {
  j = nlohmann::json{{"grid", p.grid},
                     {"log_density", p.log_density},
                     {"mean", p.mean},
                     {"median", p.median},
                     {"variance", p.variance},
                     {"credible_interval_95",
                      {p.credible_interval_95.first, p.credible_interval_95.second}}};
}

void from_json(const nlohmann::json& j, Posterior& p) {
  j.at("grid").get_to(p.grid);
  j.at("log_density").get_to(p.log_density);
  j.at("mean").get_to(p.mean);
  j.at("median").get_to(p.median);
  j.at("variance").get_to(p.variance);
  const auto& ci = j.at("credible_interval_95");
  p.credible_interval_95 = {ci.at(0).get<double>(), ci.at(1).get<double>()};
}

}  // namespace rhetor
