#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "rhetor/judge.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <thread>

#include "rhetor/errors.hpp"
#include "rhetor/store.hpp"

namespace rhetor {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return s;
}

// Strips leading whitespace and markdown decoration so "**ANSWER:** ..."
// still parses.
std::string strip_decoration(const std::string& line) {
  size_t b = 0;
  while (b < line.size()) {
    const char c = line[b];
    if (std::isspace(static_cast<unsigned char>(c)) || c == '*' || c == '#' ||
        c == '-' || c == '>') {
      ++b;
    } else {
      break;
    }
  }
  return line.substr(b);
}

// If stripped starts with "<marker>:" (case-insensitive, optional spaces
// before the colon), returns the text after the colon.
std::optional<std::string> after_marker(const std::string& stripped,
                                        const std::string& marker) {
  const std::string low = lower(stripped);
  if (low.rfind(marker, 0) != 0) return std::nullopt;
  size_t pos = marker.size();
  while (pos < stripped.size() &&
         std::isspace(static_cast<unsigned char>(stripped[pos]))) {
    ++pos;
  }
  if (pos >= stripped.size() || stripped[pos] != ':') return std::nullopt;
  return stripped.substr(pos + 1);
}

std::vector<std::string> split_lines(const std::string& content) {
  std::vector<std::string> lines;
  std::string current;
  for (char c : content) {
    if (c == '\n') {
      lines.push_back(current);
      current.clear();
    } else if (c != '\r') {
      current += c;
    }
  }
  lines.push_back(current);
  return lines;
}

}  // namespace

void JudgeRequest::validate() const {
  if (paper_id.empty()) throw InvalidArgumentError("judge request: empty paper_id");
  if (item_a.paper_id != paper_id || item_b.paper_id != paper_id) {
    throw InvalidArgumentError(
        "judge request: items do not belong to paper " + paper_id);
  }
  if (item_a == item_b) {
    throw InvalidArgumentError("judge request: identical items");
  }
  if (text_a.empty() || text_b.empty()) {
    throw InvalidArgumentError("judge request: empty text");
  }
  if (text_a == text_b) {
    throw InvalidArgumentError(
        "judge request: identical texts for " + paper_id +
        "; a judgment between them would be meaningless");
  }
}

JudgeRequest JudgeRequest::swapped() const {
  return JudgeRequest{paper_id, item_b, item_a, text_b, text_a, template_id};
}

SimulatedJudgeBackend::SimulatedJudgeBackend(
    std::map<std::string, double> true_scores, JudgeNoise noise, uint64_t seed)
    : true_scores_(std::move(true_scores)), noise_(noise), rng_(seed) {}

JudgeVerdict SimulatedJudgeBackend::decide(const JudgeRequest& presented) {
  presented.validate();
  auto score_of = [&](const ItemRef& item) {
    const auto it = true_scores_.find(item.item_key());
    if (it == true_scores_.end()) {
      throw InvalidArgumentError("simulated judge: no true score for item '" +
                                 item.item_key() + "'");
    }
    return it->second;
  };
  const double s_a = score_of(presented.item_a);
  const double s_b = score_of(presented.item_b);

  Winner winner;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    ++calls_;
    if (noise_ == JudgeNoise::BT) {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      winner = u(rng_) < bt_win_probability(s_a, s_b) ? Winner::A : Winner::B;
    } else {
      winner = s_a >= s_b ? Winner::A : Winner::B;
    }
  }

  JudgeVerdict verdict;
  verdict.winner = winner;
  verdict.rationale = "simulated judgment";
  verdict.raw_response = winner == Winner::A ? "ANSWER: Reference A"
                                             : "ANSWER: Reference B";
  return verdict;
}

long long SimulatedJudgeBackend::calls() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return calls_;
}

std::chrono::milliseconds RetryPolicy::delay_for(int attempt,
                                                 double unit_jitter) const {
  if (attempt < 1) throw InvalidArgumentError("retry: attempt must be >= 1");
  double delay = static_cast<double>(base_delay.count());
  for (int i = 1; i < attempt; ++i) delay *= factor;
  delay *= 1.0 + jitter * (2.0 * unit_jitter - 1.0);
  if (delay < 0.0) delay = 0.0;
  return std::chrono::milliseconds(static_cast<long long>(delay));
}

TokenBucket::TokenBucket(double requests_per_minute, double burst)
    : rate_per_ms_(requests_per_minute / 60000.0),
      capacity_(std::max(1.0, burst)),
      tokens_(capacity_),
      last_(std::chrono::steady_clock::now()) {}

void TokenBucket::acquire() {
  if (rate_per_ms_ <= 0.0) return;
  for (;;) {
    std::chrono::milliseconds wait{0};
    {
      std::lock_guard<std::mutex> lock(mutex_);
      const auto now = std::chrono::steady_clock::now();
      const double elapsed_ms =
          std::chrono::duration<double, std::milli>(now - last_).count();
      last_ = now;
      tokens_ = std::min(capacity_, tokens_ + elapsed_ms * rate_per_ms_);
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      wait = std::chrono::milliseconds(
          static_cast<long long>((1.0 - tokens_) / rate_per_ms_) + 1);
    }
    std::this_thread::sleep_for(wait);
  }
}

nlohmann::json HttpChatConfig::describe() const {
  nlohmann::json j{{"endpoint", endpoint},
                   {"path", path},
                   {"model", model},
                   {"api_key_env", api_key_env},
                   {"timeout_seconds", timeout_seconds},
                   {"retry",
                    {{"max_attempts", retry.max_attempts},
                     {"base_delay_ms", retry.base_delay.count()},
                     {"factor", retry.factor},
                     {"jitter", retry.jitter}}}};
  if (temperature) {
    j["temperature"] = *temperature;
  } else {
    j["temperature"] = nullptr;
  }
  return j;
}

HttpChatBackend::HttpChatBackend(HttpChatConfig config)
    : config_(std::move(config)),
      rng_(std::chrono::steady_clock::now().time_since_epoch().count()) {
  if (config_.endpoint.empty()) {
    throw ConfigError("chat backend: empty endpoint");
  }
  if (config_.model.empty()) {
    throw ConfigError("chat backend: empty model name");
  }
  if (const char* key = std::getenv(config_.api_key_env.c_str())) {
    api_key_ = key;
  }
}

std::string HttpChatBackend::complete(const std::string& prompt) {
  nlohmann::json body{{"model", config_.model},
                      {"messages",
                       nlohmann::json::array(
                           {{{"role", "user"}, {"content", prompt}}})}};
  if (config_.temperature) body["temperature"] = *config_.temperature;
  const std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
    if (attempt > 1) {
      double unit;
      {
        std::lock_guard<std::mutex> lock(rng_mutex_);
        unit = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
      }
      std::this_thread::sleep_for(config_.retry.delay_for(attempt - 1, unit));
    }
    if (config_.limiter) config_.limiter->acquire();

    httplib::Client client(config_.endpoint);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    client.set_write_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) {
      headers.emplace("Authorization", "Bearer " + api_key_);
    }

    auto res = client.Post(config_.path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw TransportExhaustedError(
          "chat backend rejected the request (HTTP " +
          std::to_string(res->status) + "): " + res->body.substr(0, 200));
    }
    try {
      const auto reply = nlohmann::json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content")
          .get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      last_error = std::string("malformed completion body: ") + e.what();
      continue;
    }
  }
  throw TransportExhaustedError(
      "chat backend unavailable after " +
      std::to_string(config_.retry.max_attempts) + " attempts; last error: " +
      last_error);
}

std::string HttpChatBackend::id() const { return "remote:" + config_.model; }

JudgeVerdict parse_judge_response(const std::string& content) {
  const auto lines = split_lines(content);

  std::optional<Winner> winner;
  size_t answer_line = lines.size();
  for (size_t i = 0; i < lines.size(); ++i) {
    const auto rest = after_marker(strip_decoration(lines[i]), "answer");
    if (!rest) continue;
    const std::string low = lower(*rest);
    const size_t pos_a = low.find("reference a");
    const size_t pos_b = low.find("reference b");
    if (pos_a != std::string::npos &&
        (pos_b == std::string::npos || pos_a < pos_b)) {
      winner = Winner::A;
    } else if (pos_b != std::string::npos) {
      winner = Winner::B;
    } else {
      // Tolerate a bare letter.
      const std::string token = trim(low);
      if (token == "a") winner = Winner::A;
      if (token == "b") winner = Winner::B;
    }
    answer_line = i;
    break;  // first ANSWER line wins
  }
  if (!winner) {
    throw JudgeProtocolError(
        "judge reply has no parseable ANSWER line naming Reference A or B",
        content, 1);
  }

  std::string rationale;
  for (size_t i = 0; i < lines.size(); ++i) {
    const auto rest = after_marker(strip_decoration(lines[i]), "reasoning");
    if (!rest) continue;
    rationale = trim(*rest);
    for (size_t j = i + 1; j < lines.size(); ++j) {
      if (j == answer_line) break;
      if (!rationale.empty()) rationale += "\n";
      rationale += lines[j];
    }
    rationale = trim(rationale);
    break;
  }

  JudgeVerdict verdict;
  verdict.winner = *winner;
  verdict.rationale = rationale;
  verdict.raw_response = content;
  return verdict;
}

RemoteJudgeBackend::RemoteJudgeBackend(std::shared_ptr<ChatBackend> chat,
                                       PromptTemplate tmpl, RetryPolicy retry)
    : chat_(std::move(chat)), template_(std::move(tmpl)), retry_(retry) {
  if (!chat_) throw InvalidArgumentError("remote judge: null chat backend");
  template_.require_slots({"ref_a", "ref_b"});
}

JudgeVerdict RemoteJudgeBackend::decide(const JudgeRequest& presented) {
  presented.validate();
  const std::string prompt = template_.render(
      {{"ref_a", presented.text_a}, {"ref_b", presented.text_b}});

  std::string last_response;
  for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
    const std::string content = chat_->complete(prompt);
    try {
      JudgeVerdict verdict = parse_judge_response(content);
      verdict.attempts = attempt;
      return verdict;
    } catch (const JudgeProtocolError&) {
      last_response = content;  // fresh sample next attempt
    }
  }
  throw JudgeProtocolError("judge reply unparseable after " +
                               std::to_string(retry_.max_attempts) +
                               " attempts",
                           last_response, retry_.max_attempts);
}

std::string RemoteJudgeBackend::id() const { return chat_->id(); }

JudgeGateway::JudgeGateway(std::shared_ptr<JudgeBackend> backend,
                           GatewayOptions options)
    : backend_(std::move(backend)),
      options_(std::move(options)),
      rng_(options_.rng_seed) {
  if (!backend_) throw InvalidArgumentError("gateway: null judge backend");
  if (!options_.clock) throw InvalidArgumentError("gateway: null clock");
}

ComparisonRecord JudgeGateway::judge_pair(const JudgeRequest& request) {
  request.validate();
  bool swap = false;
  if (options_.randomize_order) {
    std::lock_guard<std::mutex> lock(rng_mutex_);
    swap = std::bernoulli_distribution(0.5)(rng_);
  }

  const JudgeVerdict verdict =
      backend_->decide(swap ? request.swapped() : request);

  ComparisonRecord record;
  record.item_a = request.item_a;
  record.item_b = request.item_b;
  record.winner = swap ? flipped(verdict.winner) : verdict.winner;
  record.judge_id = backend_->id();
  record.presented_order_swapped = swap;
  record.rationale = verdict.rationale;
  record.timestamp = options_.clock();
  record.validate();
  return record;
}

namespace {

std::string replay_key(const std::string& paper_id, const ItemRef& a,
                       const ItemRef& b) {
  return ComparisonSlot{paper_id, a, b}.key();
}

}  // namespace

ReplayJudge::ReplayJudge(const std::vector<ComparisonRecord>& prior,
                         std::shared_ptr<PairwiseJudge> delegate)
    : delegate_(std::move(delegate)) {
  for (const auto& r : prior) {
    cache_.emplace(replay_key(r.item_a.paper_id, r.item_a, r.item_b), r);
  }
}

ComparisonRecord ReplayJudge::judge_pair(const JudgeRequest& request) {
  const std::string key =
      replay_key(request.paper_id, request.item_a, request.item_b);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = cache_.find(key);
    if (it != cache_.end()) {
      ++hits_;
      return it->second;
    }
  }
  if (!delegate_) {
    throw DataIntegrityError(
        "replay judge: no stored judgment for paper " + request.paper_id +
        " and no live judge configured");
  }
  ComparisonRecord record = delegate_->judge_pair(request);
  std::function<void(const ComparisonRecord&)> sink;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    ++misses_;
    cache_.emplace(key, record);
    sink = sink_;
  }
  if (sink) sink(record);
  return record;
}

void ReplayJudge::set_sink(std::function<void(const ComparisonRecord&)> sink) {
  std::lock_guard<std::mutex> lock(mutex_);
  sink_ = std::move(sink);
}

long long ReplayJudge::hits() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return hits_;
}

long long ReplayJudge::misses() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return misses_;
}

DirectRating direct_rating(const std::string& abstract_text,
                           const std::string& substantive_content,
                           ChatBackend& chat, const PromptTemplate& tmpl,
                           const RetryPolicy& retry) {
  if (abstract_text.empty() || substantive_content.empty()) {
    throw InvalidArgumentError("direct rating: empty abstract or content");
  }
  tmpl.require_slots({"abstract", "methods_results"});
  const std::string prompt = tmpl.render(
      {{"abstract", abstract_text}, {"methods_results", substantive_content}});

  std::string last_response;
  for (int attempt = 1; attempt <= retry.max_attempts; ++attempt) {
    const std::string content = chat.complete(prompt);
    last_response = content;

    const size_t open = content.find('{');
    const size_t close = content.rfind('}');
    if (open == std::string::npos || close == std::string::npos ||
        close < open) {
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(content.substr(open, close - open + 1));
    } catch (const nlohmann::json::exception&) {
      continue;
    }
    if (!j.contains("rating") || !j["rating"].is_number()) continue;
    const double raw = j["rating"].get<double>();
    if (raw != std::floor(raw)) continue;

    const int rating = static_cast<int>(raw);
    if (rating < 1 || rating > 10) {
      throw ValidationError("direct rating " + std::to_string(rating) +
                            " outside 1..10; refusing to clamp");
    }
    return DirectRating{rating, j.value("justification", "")};
  }
  throw JudgeProtocolError("direct rating reply unparseable after " +
                               std::to_string(retry.max_attempts) +
                               " attempts",
                           last_response, retry.max_attempts);
}

}  // namespace rhetor
