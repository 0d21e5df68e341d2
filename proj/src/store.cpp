#include "rhetor/store.hpp"

#include <fcntl.h>
#include <openssl/evp.h>
#include <sys/file.h>
#include <unistd.h>

#include <cstdint>
#include <fstream>
#include <set>
#include <unordered_set>
#include <vector>

namespace rhetor {

std::string canonical_json(const nlohmann::json& j) {
  // nlohmann's default object backing is std::map, so keys are already
  // sorted; dump() with no indent gives the canonical bytes.
  return j.dump();
}

std::string content_id(const nlohmann::json& j) {
  const std::string bytes = canonical_json(j);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw StorageError("content_id: digest failure");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

void to_json(nlohmann::json& j, const QueryScore& s) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& [persona_id, won] : s.comparisons) {
    comps.push_back({{"persona_id", persona_id}, {"won", won}});
  }
  j = nlohmann::json{{"paper_id", s.paper_id},
                     {"score", s.score},
                     {"std", s.stddev},
                     {"mode", s.mode},
                     {"comparisons", comps}};
}

void from_json(const nlohmann::json& j, QueryScore& s) {
  j.at("paper_id").get_to(s.paper_id);
  j.at("score").get_to(s.score);
  j.at("std").get_to(s.stddev);
  j.at("mode").get_to(s.mode);
  s.comparisons.clear();
  for (const auto& c : j.at("comparisons")) {
    s.comparisons.emplace_back(c.at("persona_id").get<std::string>(),
                               c.at("won").get<bool>());
  }
}

namespace {

std::string item_key_tagged(const ItemRef& r) {
  return r.is_original() ? "orig" : "persona:" + *r.persona_id;
}

}  // namespace

std::string ComparisonSlot::key() const {
  std::string a = item_key_tagged(item_a);
  std::string b = item_key_tagged(item_b);
  if (b < a) std::swap(a, b);
  return paper_id + "\x1f" + a + "\x1f" + b;
}

std::vector<ComparisonSlot> pending_work(
    const std::vector<ComparisonSlot>& plan,
    const std::vector<ComparisonRecord>& existing) {
  std::unordered_set<std::string> satisfied;
  satisfied.reserve(existing.size());
  for (const auto& r : existing) {
    ComparisonSlot s{r.item_a.paper_id, r.item_a, r.item_b};
    satisfied.insert(s.key());
  }
  std::vector<ComparisonSlot> pending;
  for (const auto& slot : plan) {
    if (!satisfied.count(slot.key())) pending.push_back(slot);
  }
  return pending;
}

CorpusStore::CorpusStore(std::filesystem::path dir)
    : CorpusStore(std::move(dir), /*read_only=*/false) {}

CorpusStore CorpusStore::open_read_only(std::filesystem::path dir) {
  return CorpusStore(std::move(dir), /*read_only=*/true);
}

CorpusStore::CorpusStore(std::filesystem::path dir, bool read_only)
    : dir_(std::move(dir)), read_only_(read_only) {
  std::error_code ec;
  if (read_only_) {
    if (!std::filesystem::is_directory(dir_)) {
      throw StorageError("store: no such directory " + dir_.string());
    }
    return;
  }
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw StorageError("store: cannot create " + dir_.string());
  const auto lock_path = dir_ / ".lock";
  lock_fd_ = ::open(lock_path.c_str(), O_CREAT | O_RDWR, 0644);
  if (lock_fd_ < 0) throw StorageError("store: cannot open lock file");
  if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(lock_fd_);
    lock_fd_ = -1;
    throw StorageError("store: " + dir_.string() +
                       " is locked by another writer");
  }
}

CorpusStore::~CorpusStore() {
  if (lock_fd_ >= 0) {
    ::flock(lock_fd_, LOCK_UN);
    ::close(lock_fd_);
  }
}

CorpusStore::CorpusStore(CorpusStore&& other) noexcept
    : dir_(std::move(other.dir_)),
      read_only_(other.read_only_),
      lock_fd_(other.lock_fd_) {
  other.lock_fd_ = -1;
}

namespace {

// An interrupted writer can leave a final line without its newline. Such a
// record was never acknowledged, so drop it before appending; otherwise the
// new record would be glued onto the partial one.
void drop_partial_tail(const std::filesystem::path& path) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec || size == 0) return;
  std::ifstream in(path, std::ios::binary);
  if (!in) return;
  in.seekg(-1, std::ios::end);
  char last = 0;
  in.get(last);
  if (last == '\n') return;

  uint64_t keep = 0;
  uint64_t pos = size;
  std::vector<char> buf;
  while (pos > 0 && keep == 0) {
    const size_t n = static_cast<size_t>(std::min<uint64_t>(4096, pos));
    pos -= n;
    buf.resize(n);
    in.seekg(static_cast<std::streamoff>(pos));
    in.read(buf.data(), static_cast<std::streamsize>(n));
    for (size_t i = n; i > 0; --i) {
      if (buf[i - 1] == '\n') {
        keep = pos + i;
        break;
      }
    }
  }
  in.close();
  std::filesystem::resize_file(path, keep);
}

}  // namespace

std::string CorpusStore::append_line(const std::string& file,
                                     const nlohmann::json& j) {
  if (read_only_) throw StorageError("store: opened read-only");
  const std::string id = content_id(j);
  const std::string line = canonical_json(j);
  std::lock_guard<std::mutex> guard(write_mutex_);
  drop_partial_tail(dir_ / file);
  std::ofstream out(dir_ / file, std::ios::app | std::ios::binary);
  if (!out) throw StorageError("store: cannot open " + file + " for append");
  out << line << '\n';
  out.flush();
  if (!out) throw StorageError("store: write to " + file + " failed");
  return id;
}

std::string CorpusStore::append_paper(const PaperItem& p) {
  p.validate();
  return append_line("papers.jsonl", p);
}

std::string CorpusStore::append_counterfactual(const CounterfactualAbstract& c) {
  c.validate();
  return append_line("counterfactuals.jsonl", c);
}

std::string CorpusStore::append_comparison(const ComparisonRecord& r) {
  r.validate();
  return append_line("comparisons.jsonl", r);
}

std::string CorpusStore::append_score(const QueryScore& s) {
  if (s.paper_id.empty()) throw ValidationError("score: empty paper_id");
  if (s.mode != "map" && s.mode != "adaptive") {
    throw ValidationError("score: mode must be \"map\" or \"adaptive\"");
  }
  return append_line("scores.jsonl", s);
}

std::string CorpusStore::append_run_manifest(const nlohmann::json& manifest) {
  if (!manifest.is_object()) throw ValidationError("run manifest must be an object");
  return append_line("runs.jsonl", manifest);
}

void CorpusStore::write_personas(const std::vector<Persona>& panel) {
  if (read_only_) throw StorageError("store: opened read-only");
  std::set<std::string> ids;
  for (const auto& p : panel) {
    p.validate();
    if (!ids.insert(p.id).second) {
      throw ValidationError("panel: duplicate persona id " + p.id);
    }
  }
  std::lock_guard<std::mutex> guard(write_mutex_);
  std::ofstream out(dir_ / "personas.json", std::ios::trunc | std::ios::binary);
  out << nlohmann::json(panel).dump(2) << '\n';
  if (!out) throw StorageError("store: write to personas.json failed");
}

void CorpusStore::write_fit(const BTFit& fit) {
  if (read_only_) throw StorageError("store: opened read-only");
  fit.validate();
  std::lock_guard<std::mutex> guard(write_mutex_);
  std::ofstream out(dir_ / "fits.json", std::ios::trunc | std::ios::binary);
  out << nlohmann::json(fit).dump(2) << '\n';
  if (!out) throw StorageError("store: write to fits.json failed");
}

namespace {

// Reads a JSONL file, deduplicating by content id. A trailing line that does
// not parse is treated as a truncated tail from an interrupted write; a
// malformed line elsewhere is corruption and raises.
template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& path,
                          CorpusStore::ReadReport* report) {
  std::vector<T> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::vector<std::pair<size_t, std::string>> bad;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      bad.emplace_back(line_no, line);
      continue;
    }
    if (!seen.insert(content_id(j)).second) {
      if (report) ++report->duplicate_records;
      continue;
    }
    out.push_back(j.get<T>());
  }
  if (!bad.empty()) {
    if (bad.size() == 1 && bad.front().first == line_no) {
      if (report) ++report->truncated_tails;
    } else {
      throw StorageError("store: corrupt line " + std::to_string(bad.front().first) +
                         " in " + path.string());
    }
  }
  return out;
}

}  // namespace

std::vector<PaperItem> CorpusStore::read_papers(ReadReport* report) const {
  return read_jsonl<PaperItem>(dir_ / "papers.jsonl", report);
}

std::vector<CounterfactualAbstract> CorpusStore::read_counterfactuals(
    ReadReport* report) const {
  return read_jsonl<CounterfactualAbstract>(dir_ / "counterfactuals.jsonl", report);
}

std::vector<ComparisonRecord> CorpusStore::read_comparisons(
    ReadReport* report) const {
  return read_jsonl<ComparisonRecord>(dir_ / "comparisons.jsonl", report);
}

std::vector<QueryScore> CorpusStore::read_scores(ReadReport* report) const {
  return read_jsonl<QueryScore>(dir_ / "scores.jsonl", report);
}

std::vector<Persona> CorpusStore::read_personas() const {
  std::ifstream in(dir_ / "personas.json", std::ios::binary);
  if (!in) throw StorageError("store: personas.json not found in " + dir_.string());
  nlohmann::json j;
  in >> j;
  return j.get<std::vector<Persona>>();
}

BTFit CorpusStore::read_fit() const {
  std::ifstream in(dir_ / "fits.json", std::ios::binary);
  if (!in) throw StorageError("store: fits.json not found in " + dir_.string());
  nlohmann::json j;
  in >> j;
  return j.get<BTFit>();
}

bool CorpusStore::has_fit() const {
  return std::filesystem::exists(dir_ / "fits.json");
}

bool CorpusStore::has_personas() const {
  return std::filesystem::exists(dir_ / "personas.json");
}

void CorpusStore::compact(const std::string& kind) {
  if (read_only_) throw StorageError("store: opened read-only");
  const auto path = dir_ / (kind + ".jsonl");
  if (!std::filesystem::exists(path)) return;
  std::lock_guard<std::mutex> guard(write_mutex_);
  std::ifstream in(path, std::ios::binary);
  std::unordered_set<std::string> seen;
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;  // truncated tail dropped on compaction
    if (seen.insert(content_id(j)).second) keep.push_back(canonical_json(j));
  }
  in.close();
  const auto tmp = dir_ / (kind + ".jsonl.tmp");
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    for (const auto& l : keep) out << l << '\n';
    if (!out) throw StorageError("store: compaction write failed");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace rhetor
