#pragma once

#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "rhetor/types.hpp"

namespace rhetor {

// Canonical serialization: object keys sorted, no whitespace, shortest
// round-tripping float representation. Byte-stable across parse/serialize.
std::string canonical_json(const nlohmann::json& j);

// SHA-256 hex digest of the canonical serialization. Two records with equal
// content share an id, which is what makes appends idempotent.
std::string content_id(const nlohmann::json& j);

// Per-query result row as emitted to scores.jsonl.
struct QueryScore {
  std::string paper_id;
  double score = 0.0;
  double stddev = 0.0;
  std::string mode;  // "map" | "adaptive"
  std::vector<std::pair<std::string, bool>> comparisons;  // (persona_id, won)
};

void to_json(nlohmann::json& j, const QueryScore& s);
void from_json(const nlohmann::json& j, QueryScore& s);

// One required comparison in a plan: which two items of a paper must have a
// judged record. Satisfied by a record with the same unordered item pair.
struct ComparisonSlot {
  std::string paper_id;
  ItemRef item_a;
  ItemRef item_b;

  // Order-insensitive identity of the slot.
  std::string key() const;

  friend bool operator==(const ComparisonSlot&, const ComparisonSlot&) = default;
};

// Returns the plan slots that have no persisted record, in plan order.
std::vector<ComparisonSlot> pending_work(
    const std::vector<ComparisonSlot>& plan,
    const std::vector<ComparisonRecord>& existing);

// Append-only JSONL persistence rooted at one directory:
//   papers.jsonl, personas.json, counterfactuals.jsonl, comparisons.jsonl,
//   fits.json, scores.jsonl, runs.jsonl
// Writers take an exclusive flock on <dir>/.lock; readers need no lock.
// Within a process a mutex serializes writes per store.
class CorpusStore {
 public:
  struct ReadReport {
    int truncated_tails = 0;   // incomplete trailing lines skipped
    int duplicate_records = 0; // same content id appended more than once
  };

  // Opens (creating the directory if needed) with write access.
  explicit CorpusStore(std::filesystem::path dir);
  // Read-only view; no lock is taken and appends throw.
  static CorpusStore open_read_only(std::filesystem::path dir);
  ~CorpusStore();

  CorpusStore(CorpusStore&&) noexcept;
  CorpusStore& operator=(CorpusStore&&) = delete;
  CorpusStore(const CorpusStore&) = delete;

  const std::filesystem::path& dir() const { return dir_; }

  // Appends return the record's content id. Records are validated first.
  std::string append_paper(const PaperItem& p);
  std::string append_counterfactual(const CounterfactualAbstract& c);
  std::string append_comparison(const ComparisonRecord& r);
  std::string append_score(const QueryScore& s);
  std::string append_run_manifest(const nlohmann::json& manifest);

  // Whole-document files.
  void write_personas(const std::vector<Persona>& panel);
  void write_fit(const BTFit& fit);

  std::vector<PaperItem> read_papers(ReadReport* report = nullptr) const;
  std::vector<CounterfactualAbstract> read_counterfactuals(
      ReadReport* report = nullptr) const;
  std::vector<ComparisonRecord> read_comparisons(ReadReport* report = nullptr) const;
  std::vector<QueryScore> read_scores(ReadReport* report = nullptr) const;
  std::vector<Persona> read_personas() const;
  BTFit read_fit() const;
  bool has_fit() const;
  bool has_personas() const;

  // Rewrites a JSONL file keeping the first occurrence of each content id.
  // kind is the basename without extension, e.g. "comparisons".
  void compact(const std::string& kind);

 private:
  explicit CorpusStore(std::filesystem::path dir, bool read_only);

  std::string append_line(const std::string& file, const nlohmann::json& j);

  std::filesystem::path dir_;
  bool read_only_ = false;
  int lock_fd_ = -1;
  mutable std::mutex write_mutex_;
};

}  // namespace rhetor
