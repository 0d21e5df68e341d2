#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "rhetor/prompts.hpp"
#include "rhetor/types.hpp"

namespace rhetor {

// One pairwise judgment to obtain: two items of the same paper and the
// prompt template to use.
struct JudgeRequest {
  std::string paper_id;
  ItemRef item_a;
  ItemRef item_b;
  std::string text_a;
  std::string text_b;
  std::string template_id = "pairwise_v1";

  void validate() const;  // texts nonempty and distinct, items distinct
  JudgeRequest swapped() const;
};

// What a backend returned for one presented pair. winner is relative to the
// presented order; the gateway unwinds randomization before recording.
struct JudgeVerdict {
  Winner winner = Winner::A;
  std::string rationale;
  std::string raw_response;
  int attempts = 1;
};

// Uniform verdict-level interface implemented by the remote LLM judge and
// the simulated judge.
class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;
  virtual JudgeVerdict decide(const JudgeRequest& presented) = 0;
  virtual std::string id() const = 0;
};

enum class JudgeNoise { BT, Deterministic };

// Test-oracle backend: items carry known true scores. BT mode samples the
// winner from bt_win_probability; Deterministic awards the higher score,
// ties to presented A.
class SimulatedJudgeBackend : public JudgeBackend {
 public:
  SimulatedJudgeBackend(std::map<std::string, double> true_scores,
                        JudgeNoise noise, uint64_t seed);

  JudgeVerdict decide(const JudgeRequest& presented) override;
  std::string id() const override { return "simulated"; }

  long long calls() const;

 private:
  std::map<std::string, double> true_scores_;
  JudgeNoise noise_;
  mutable std::mutex mutex_;
  std::mt19937_64 rng_;
  long long calls_ = 0;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{1000};
  double factor = 4.0;
  double jitter = 0.25;  // +/- fraction of the delay

  std::chrono::milliseconds delay_for(int attempt, double unit_jitter) const;
};

// Token-bucket limiter shared by all in-flight remote calls.
class TokenBucket {
 public:
  // requests_per_minute <= 0 disables limiting.
  explicit TokenBucket(double requests_per_minute, double burst = 1.0);

  void acquire();

 private:
  double rate_per_ms_;
  double capacity_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
  std::mutex mutex_;
};

// Minimal chat-completion client surface so the remote judge, the direct
// rater, and the remote generator can share transport plumbing (and tests
// can script it).
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  // Returns the assistant message content. Transport failures are retried
  // with exponential backoff internally; TransportExhaustedError after that.
  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::string id() const = 0;
};

struct HttpChatConfig {
  std::string endpoint;  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key_env = "RHETOR_API_KEY";
  std::optional<double> temperature;  // absent: provider default
  RetryPolicy retry;
  std::shared_ptr<TokenBucket> limiter;
  int timeout_seconds = 120;

  nlohmann::json describe() const;  // run-manifest fragment (no secrets)
};

// HTTP chat-completion backend. Request: {"model", "messages":[{"role":
// "user","content": prompt}]}; reply: choices[0].message.content.
class HttpChatBackend : public ChatBackend {
 public:
  explicit HttpChatBackend(HttpChatConfig config);

  std::string complete(const std::string& prompt) override;
  std::string id() const override;

 private:
  HttpChatConfig config_;
  std::string api_key_;
  mutable std::mutex rng_mutex_;
  std::mt19937_64 rng_;
};

// Parses the decide() reply of the pairwise judge prompt: the first line
// matching "ANSWER:" (case-insensitive) names Reference A or B; everything
// after "REASONING:" is the rationale. Throws JudgeProtocolError when no
// answer can be extracted.
JudgeVerdict parse_judge_response(const std::string& content);

// LLM judge over a chat backend. Malformed replies are retried up to
// retry.max_attempts times (protocol retries; transport retries live in the
// chat backend).
class RemoteJudgeBackend : public JudgeBackend {
 public:
  RemoteJudgeBackend(std::shared_ptr<ChatBackend> chat, PromptTemplate tmpl,
                     RetryPolicy retry = {});

  JudgeVerdict decide(const JudgeRequest& presented) override;
  std::string id() const override;

 private:
  std::shared_ptr<ChatBackend> chat_;
  PromptTemplate template_;
  RetryPolicy retry_;
};

// Record-level interface every consumer of judgments programs against.
class PairwiseJudge {
 public:
  virtual ~PairwiseJudge() = default;
  virtual ComparisonRecord judge_pair(const JudgeRequest& request) = 0;
};

struct GatewayOptions {
  bool randomize_order = true;
  uint64_t rng_seed = 0;
  // Injectable for reproducible stored records.
  std::function<std::string()> clock = rfc3339_utc_now;
};

// Wraps a verdict backend: flips a fair coin for presentation order, unwinds
// it so the record's winner refers to the caller's labels, and stamps
// judge_id and timestamp.
class JudgeGateway : public PairwiseJudge {
 public:
  JudgeGateway(std::shared_ptr<JudgeBackend> backend, GatewayOptions options = {});

  ComparisonRecord judge_pair(const JudgeRequest& request) override;

 private:
  std::shared_ptr<JudgeBackend> backend_;
  GatewayOptions options_;
  std::mutex rng_mutex_;
  std::mt19937_64 rng_;
};

// Replay cache keyed by (paper, unordered item pair, template). A hit
// returns the stored record verbatim with zero backend calls; a miss goes to
// the delegate when one is configured, else raises DataIntegrityError.
class ReplayJudge : public PairwiseJudge {
 public:
  explicit ReplayJudge(const std::vector<ComparisonRecord>& prior,
                       std::shared_ptr<PairwiseJudge> delegate = nullptr);

  ComparisonRecord judge_pair(const JudgeRequest& request) override;

  // Invoked for records produced by the delegate (e.g. to persist them).
  void set_sink(std::function<void(const ComparisonRecord&)> sink);

  long long hits() const;
  long long misses() const;

 private:
  mutable std::mutex mutex_;
  std::unordered_map<std::string, ComparisonRecord> cache_;
  std::shared_ptr<PairwiseJudge> delegate_;
  std::function<void(const ComparisonRecord&)> sink_;
  long long hits_ = 0;
  long long misses_ = 0;
};

struct DirectRating {
  int rating = 0;  // 1..10
  std::string justification;
};

// One-shot overclaiming rating of an abstract given its substantive content.
// Expects the backend to return JSON {"rating", "justification"}; ratings
// outside 1..10 are rejected, not clamped.
DirectRating direct_rating(const std::string& abstract_text,
                           const std::string& substantive_content,
                           ChatBackend& chat, const PromptTemplate& tmpl,
                           const RetryPolicy& retry = {});

}  // namespace rhetor
