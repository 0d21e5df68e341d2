#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rhetor/analysis.hpp"
#include "rhetor/calibration.hpp"
#include "rhetor/generation.hpp"
#include "rhetor/judge.hpp"
#include "rhetor/pipeline.hpp"
#include "rhetor/query.hpp"
#include "rhetor/simulate.hpp"
#include "rhetor/store.hpp"
#include "rhetor/util.hpp"

namespace {

using nlohmann::json;
using namespace rhetor;

json load_json_file(const std::string& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + what + " file: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(what + " file " + path + " is not valid JSON: " + e.what());
  }
}

std::vector<PaperItem> load_papers_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open papers file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string content = buffer.str();

  const size_t first = content.find_first_not_of(" \t\r\n");
  std::vector<PaperItem> papers;
  if (first == std::string::npos) return papers;

  try {
    if (content[first] == '[') {
      papers = json::parse(content).get<std::vector<PaperItem>>();
    } else {
      std::istringstream lines(content);
      std::string line;
      while (std::getline(lines, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        papers.push_back(json::parse(line).get<PaperItem>());
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError("papers file " + path + " is not valid JSON: " + e.what());
  }
  for (const auto& p : papers) p.validate();
  return papers;
}

std::vector<Persona> load_panel_file(const std::string& path) {
  const json j = load_json_file(path, "panel");
  std::vector<Persona> panel;
  try {
    panel = j.get<std::vector<Persona>>();
  } catch (const json::exception& e) {
    throw ConfigError("panel file " + path + ": " + e.what());
  }
  if (panel.empty()) throw ConfigError("panel file " + path + " lists no personas");
  for (const auto& p : panel) p.validate();
  return panel;
}

// Fills flag targets from the config file for flags the user did not pass.
class ConfigOverlay {
 public:
  template <typename T>
  void bind(CLI::Option* opt, const std::string& key, T& target) {
    appliers_.push_back([opt, key, &target](const json& cfg) {
      if (opt->count() > 0 || !cfg.contains(key)) return;
      try {
        target = cfg.at(key).get<T>();
      } catch (const json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
      }
    });
  }

  void bind_optional_number(CLI::Option* opt, const std::string& key,
                            std::optional<double>& target) {
    appliers_.push_back([opt, key, &target](const json& cfg) {
      if (opt->count() > 0 || !cfg.contains(key)) return;
      const json& value = cfg.at(key);
      if (value.is_null()) {
        target.reset();
      } else if (value.is_number()) {
        target = value.get<double>();
      } else {
        throw ConfigError("config key '" + key + "' has the wrong type");
      }
    });
  }

  void apply(const std::string& config_path) const {
    if (config_path.empty()) return;
    const json cfg = load_json_file(config_path, "config");
    if (!cfg.is_object()) throw ConfigError("config file must hold a JSON object");
    for (const auto& apply_one : appliers_) apply_one(cfg);
  }

 private:
  std::vector<std::function<void(const json&)>> appliers_;
};

ProgressFn make_progress(const std::string& mode) {
  if (mode == "none") return {};
  auto mutex = std::make_shared<std::mutex>();
  const bool as_json = mode == "json";
  return [mutex, as_json](const ProgressEvent& event) {
    std::lock_guard<std::mutex> guard(*mutex);
    if (as_json) {
      const json line{{"stage", event.stage},
                      {"done", event.done},
                      {"total", event.total},
                      {"detail", event.detail}};
      std::cerr << line.dump() << '\n';
    } else {
      std::cerr << event.stage << ' ' << event.done << '/' << event.total;
      if (!event.detail.empty()) std::cerr << ' ' << event.detail;
      std::cerr << '\n';
    }
  };
}

struct RemoteOptions {
  std::string endpoint;
  std::string model;
  std::string api_path = "/v1/chat/completions";
  std::string api_key_env = "RHETOR_API_KEY";
  std::optional<double> temperature;
  double rpm = 0.0;
  int timeout_seconds = 120;
  int retry_attempts = 3;
};

struct JudgeOptions {
  std::string backend = "remote";  // remote | simulated
  std::string template_path;
  std::string template_id = "pairwise_v1";
  std::string sim_scores_path;
  std::string sim_noise = "bt";
  uint64_t sim_seed = 0;
  uint64_t order_seed = 0;
  bool keep_given_order = false;
};

struct GeneratorOptions {
  std::string backend = "remote";  // remote | synthetic
  std::string template_path;
  int max_attempts = 3;
};

void add_remote_flags(CLI::App* cmd, ConfigOverlay& overlay, RemoteOptions& r) {
  overlay.bind(cmd->add_option("--endpoint", r.endpoint,
                               "Chat API base URL (scheme://host[:port])"),
               "endpoint", r.endpoint);
  overlay.bind(cmd->add_option("--model", r.model, "Chat model name"), "model",
               r.model);
  overlay.bind(cmd->add_option("--api-path", r.api_path, "Chat completion path"),
               "api_path", r.api_path);
  overlay.bind(cmd->add_option("--api-key-env", r.api_key_env,
                               "Environment variable holding the API key"),
               "api_key_env", r.api_key_env);
  overlay.bind_optional_number(
      cmd->add_option("--temperature", r.temperature,
                      "Sampling temperature (provider default when unset)"),
      "temperature", r.temperature);
  overlay.bind(cmd->add_option("--rpm", r.rpm,
                               "Requests per minute across all workers (0: unlimited)"),
               "rpm", r.rpm);
  overlay.bind(cmd->add_option("--timeout", r.timeout_seconds,
                               "HTTP timeout in seconds"),
               "timeout_seconds", r.timeout_seconds);
  overlay.bind(cmd->add_option("--retry-attempts", r.retry_attempts,
                               "Transport retry budget per request"),
               "retry_attempts", r.retry_attempts);
}

void add_judge_flags(CLI::App* cmd, ConfigOverlay& overlay, JudgeOptions& o) {
  overlay.bind(cmd->add_option("--judge-backend", o.backend,
                               "Judge backend: remote or simulated")
                   ->check(CLI::IsMember({"remote", "simulated"})),
               "judge_backend", o.backend);
  overlay.bind(cmd->add_option("--judge-template", o.template_path,
                               "Pairwise judge prompt template file"),
               "judge_template", o.template_path);
  overlay.bind(cmd->add_option("--template-id", o.template_id,
                               "Identifier stamped into judged records"),
               "template_id", o.template_id);
  overlay.bind(cmd->add_option("--sim-scores", o.sim_scores_path,
                               "JSON map of item key to true score (simulated judge)"),
               "sim_scores", o.sim_scores_path);
  overlay.bind(cmd->add_option("--sim-noise", o.sim_noise,
                               "Simulated judge noise: bt or deterministic")
                   ->check(CLI::IsMember({"bt", "deterministic"})),
               "sim_noise", o.sim_noise);
  overlay.bind(cmd->add_option("--sim-seed", o.sim_seed, "Simulated judge RNG seed"),
               "sim_seed", o.sim_seed);
  overlay.bind(cmd->add_option("--order-seed", o.order_seed,
                               "Presentation-order RNG seed"),
               "order_seed", o.order_seed);
  overlay.bind(cmd->add_flag("--keep-given-order", o.keep_given_order,
                             "Disable presentation-order randomization"),
               "keep_given_order", o.keep_given_order);
}

void add_generator_flags(CLI::App* cmd, ConfigOverlay& overlay,
                         GeneratorOptions& g) {
  overlay.bind(cmd->add_option("--generator-backend", g.backend,
                               "Generator backend: remote or synthetic")
                   ->check(CLI::IsMember({"remote", "synthetic"})),
               "generator_backend", g.backend);
  overlay.bind(cmd->add_option("--generation-template", g.template_path,
                               "Counterfactual generation prompt template file"),
               "generation_template", g.template_path);
  overlay.bind(cmd->add_option("--generation-max-attempts", g.max_attempts,
                               "Length-constraint retries per counterfactual"),
               "generation_max_attempts", g.max_attempts);
}

std::shared_ptr<TokenBucket> make_limiter(const RemoteOptions& r) {
  if (r.rpm <= 0.0) return nullptr;
  return std::make_shared<TokenBucket>(r.rpm);
}

std::shared_ptr<ChatBackend> make_chat(const RemoteOptions& r,
                                       const std::shared_ptr<TokenBucket>& limiter) {
  if (r.endpoint.empty() || r.model.empty()) {
    throw ConfigError("remote backend needs --endpoint and --model");
  }
  HttpChatConfig config;
  config.endpoint = r.endpoint;
  config.path = r.api_path;
  config.model = r.model;
  config.api_key_env = r.api_key_env;
  config.temperature = r.temperature;
  config.retry.max_attempts = r.retry_attempts;
  config.limiter = limiter;
  config.timeout_seconds = r.timeout_seconds;
  return std::make_shared<HttpChatBackend>(config);
}

std::unique_ptr<PairwiseJudge> make_judge(const JudgeOptions& o,
                                          const RemoteOptions& r,
                                          const std::shared_ptr<TokenBucket>& limiter) {
  std::shared_ptr<JudgeBackend> backend;
  if (o.backend == "simulated") {
    if (o.sim_scores_path.empty()) {
      throw ConfigError("simulated judge needs --sim-scores");
    }
    const json j = load_json_file(o.sim_scores_path, "sim-scores");
    if (!j.is_object()) {
      throw ConfigError("sim-scores file must map item keys to scores");
    }
    std::map<std::string, double> scores;
    for (const auto& [key, value] : j.items()) {
      if (!value.is_number()) {
        throw ConfigError("sim-scores entry '" + key + "' is not a number");
      }
      scores[key] = value.get<double>();
    }
    const JudgeNoise noise =
        o.sim_noise == "bt" ? JudgeNoise::BT : JudgeNoise::Deterministic;
    backend = std::make_shared<SimulatedJudgeBackend>(std::move(scores), noise,
                                                      o.sim_seed);
  } else {
    if (o.template_path.empty()) {
      throw ConfigError("remote judge needs --judge-template");
    }
    const PromptTemplate tmpl =
        load_template_file(o.template_path, o.template_id);
    RetryPolicy retry;
    retry.max_attempts = r.retry_attempts;
    backend = std::make_shared<RemoteJudgeBackend>(make_chat(r, limiter), tmpl,
                                                   retry);
  }
  GatewayOptions gateway;
  gateway.randomize_order = !o.keep_given_order;
  gateway.rng_seed = o.order_seed;
  return std::make_unique<JudgeGateway>(std::move(backend), gateway);
}

std::unique_ptr<AbstractGenerator> make_generator(
    const GeneratorOptions& g, const RemoteOptions& r,
    const std::shared_ptr<TokenBucket>& limiter) {
  if (g.backend == "synthetic") {
    return std::make_unique<SyntheticAbstractGenerator>();
  }
  if (g.template_path.empty()) {
    throw ConfigError("remote generator needs --generation-template");
  }
  const PromptTemplate tmpl = load_template_file(g.template_path, "generation");
  return std::make_unique<RemoteAbstractGenerator>(make_chat(r, limiter), tmpl);
}

std::vector<Persona> calibrated_panel_from_store(const CorpusStore& store) {
  if (!store.has_personas() || !store.has_fit()) {
    throw DataIntegrityError(
        "store has no calibrated panel; run calibrate first");
  }
  return store.read_personas();
}

void print_failures(const std::vector<std::string>& failures,
                    const std::string& what) {
  if (failures.empty()) return;
  std::cerr << "[warning] " << failures.size() << " " << what << " failed:\n";
  for (const auto& f : failures) std::cerr << "  " << f << '\n';
}

void print_generation_failures(const GenerationReport& report) {
  if (report.failures.empty()) return;
  std::cerr << "[warning] " << report.failures.size() << " generations failed:\n";
  for (const auto& f : report.failures) {
    std::cerr << "  " << f.paper_id << "/" << f.persona_id << ": " << f.message
              << '\n';
  }
}

void write_text_output(const std::string& out_path, const std::string& content) {
  if (out_path.empty() || out_path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open output file: " + out_path);
  out << content;
  if (!out.flush()) throw StorageError("write to " + out_path + " failed");
}

json group_summary_json(const GroupSummary& g) {
  return json{{"group", g.group},
              {"count", g.count},
              {"mean", g.mean},
              {"stddev", g.stddev},
              {"ci95", {g.ci95_low, g.ci95_high}},
              {"decile_boundaries", g.decile_boundaries}};
}

struct CommonArgs {
  std::string config_path;
  std::string progress = "none";
};

int dispatch(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidArgumentError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const TransportExhaustedError& e) {
    std::cerr << "backend exhausted: " << e.what() << '\n';
    return 4;
  } catch (const TransportError& e) {
    std::cerr << "backend exhausted: " << e.what() << '\n';
    return 4;
  } catch (const JudgeProtocolError& e) {
    std::cerr << "backend exhausted: " << e.what() << '\n';
    return 4;
  } catch (const GeneratorProtocolError& e) {
    std::cerr << "backend exhausted: " << e.what() << '\n';
    return 4;
  } catch (const LengthConstraintError& e) {
    std::cerr << "backend exhausted: " << e.what() << '\n';
    return 4;
  } catch (const PartialResultError& e) {
    std::cerr << "backend exhausted: " << e.what() << '\n';
    return 4;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Panel-calibrated pairwise scoring of paper abstracts"};
  app.require_subcommand(1);
  app.fallthrough();

  auto common = std::make_shared<CommonArgs>();
  app.add_option("--config", common->config_path,
                 "JSON config file; flags override its keys");
  app.add_option("--progress", common->progress,
                 "Progress reporting on stderr: none, plain, or json")
      ->check(CLI::IsMember({"none", "plain", "json"}));

  int exit_code = 0;
  auto guard = [&exit_code](const std::function<void()>& body) {
    exit_code = dispatch(body);
  };

  // calibrate
  {
    auto* cmd = app.add_subcommand(
        "calibrate", "Generate, judge, and fit the persona panel over a corpus");
    auto overlay = std::make_shared<ConfigOverlay>();
    struct Args {
      std::string store, papers, panel;
      int samples_per_pair = 20;
      uint64_t plan_seed = 42;
      int concurrency = 4;
      FitOptions fit;
      RemoteOptions remote;
      JudgeOptions judge;
      GeneratorOptions generator;
    };
    auto args = std::make_shared<Args>();
    overlay->bind(cmd->add_option("--store", args->store, "Store directory")
                      ->required(),
                  "store", args->store);
    overlay->bind(cmd->add_option("--papers", args->papers,
                                  "Corpus papers (JSON array or JSONL)")
                      ->required(),
                  "papers", args->papers);
    overlay->bind(cmd->add_option("--panel", args->panel,
                                  "Panel personas (JSON array)")
                      ->required(),
                  "panel", args->panel);
    overlay->bind(cmd->add_option("--samples-per-pair", args->samples_per_pair,
                                  "Papers judged per persona pair"),
                  "samples_per_pair", args->samples_per_pair);
    overlay->bind(cmd->add_option("--plan-seed", args->plan_seed,
                                  "Seed of the deterministic paper draw"),
                  "plan_seed", args->plan_seed);
    overlay->bind(cmd->add_option("--concurrency", args->concurrency,
                                  "Worker threads for generation and judging"),
                  "concurrency", args->concurrency);
    overlay->bind(cmd->add_option("--fit-tolerance", args->fit.tolerance,
                                  "Fixed-point convergence tolerance"),
                  "fit_tolerance", args->fit.tolerance);
    overlay->bind(cmd->add_option("--fit-max-iterations", args->fit.max_iterations,
                                  "Fixed-point iteration cap"),
                  "fit_max_iterations", args->fit.max_iterations);
    overlay->bind(cmd->add_option("--fit-smoothing", args->fit.smoothing,
                                  "Pseudo-wins added per ordered pair"),
                  "fit_smoothing", args->fit.smoothing);
    add_remote_flags(cmd, *overlay, args->remote);
    add_judge_flags(cmd, *overlay, args->judge);
    add_generator_flags(cmd, *overlay, args->generator);

    cmd->callback([args, overlay, common, &guard] {
      guard([&] {
        overlay->apply(common->config_path);
        const auto papers = load_papers_file(args->papers);
        const auto panel = load_panel_file(args->panel);
        const auto limiter = make_limiter(args->remote);
        auto generator =
            make_generator(args->generator, args->remote, limiter);
        auto judge = make_judge(args->judge, args->remote, limiter);

        CorpusStore store(args->store);
        CalibrationRunOptions options;
        options.samples_per_pair = args->samples_per_pair;
        options.plan_seed = args->plan_seed;
        options.template_id = args->judge.template_id;
        options.fit = args->fit;
        options.concurrency = args->concurrency;
        options.generation_max_attempts = args->generator.max_attempts;

        const CalibrationRunOutcome outcome =
            run_calibration(store, papers, panel, *generator, *judge, options,
                            make_progress(common->progress));

        print_generation_failures(outcome.generation);
        print_failures(outcome.judge_failures, "judgments");
        std::cerr << "planned " << outcome.slots_planned << " slots ("
                  << outcome.slots_already_done << " already judged), judged "
                  << outcome.judged << ", generated "
                  << outcome.generation.generated << "; fit "
                  << (outcome.fit.converged ? "converged" : "did not converge")
                  << " in " << outcome.fit.iterations << " iterations\n";
        const json scores(outcome.fit.scores);
        std::cout << scores.dump(2) << '\n';
      });
    });
  }

  // generate
  {
    auto* cmd = app.add_subcommand(
        "generate", "Generate missing counterfactual abstracts, no judging");
    auto overlay = std::make_shared<ConfigOverlay>();
    struct Args {
      std::string store, papers, panel;
      int concurrency = 4;
      RemoteOptions remote;
      GeneratorOptions generator;
    };
    auto args = std::make_shared<Args>();
    overlay->bind(cmd->add_option("--store", args->store, "Store directory")
                      ->required(),
                  "store", args->store);
    overlay->bind(cmd->add_option("--papers", args->papers,
                                  "Corpus papers (JSON array or JSONL)")
                      ->required(),
                  "papers", args->papers);
    overlay->bind(cmd->add_option("--panel", args->panel,
                                  "Panel personas (JSON array)")
                      ->required(),
                  "panel", args->panel);
    overlay->bind(cmd->add_option("--concurrency", args->concurrency,
                                  "Worker threads"),
                  "concurrency", args->concurrency);
    add_remote_flags(cmd, *overlay, args->remote);
    add_generator_flags(cmd, *overlay, args->generator);

    cmd->callback([args, overlay, common, &guard] {
      guard([&] {
        overlay->apply(common->config_path);
        const auto papers = load_papers_file(args->papers);
        if (papers.empty()) {
          std::cerr << "[warning] papers file is empty; nothing to generate\n";
          return;
        }
        const auto panel = load_panel_file(args->panel);
        const auto limiter = make_limiter(args->remote);
        auto generator =
            make_generator(args->generator, args->remote, limiter);

        CorpusStore store(args->store);
        const GenerationReport report = generate_panel_abstracts(
            papers, panel, *generator, store, args->concurrency,
            args->generator.max_attempts);
        print_generation_failures(report);
        store.append_run_manifest(json{
            {"kind", "generate"},
            {"timestamp", rfc3339_utc_now()},
            {"paper_count", papers.size()},
            {"panel_size", panel.size()},
            {"generated", report.generated},
            {"skipped_existing", report.skipped_existing},
            {"failures", report.failures.size()},
        });
        std::cout << "generated " << report.generated << ", skipped "
                  << report.skipped_existing << " existing, "
                  << report.failures.size() << " failures\n";
      });
    });
  }

  // judge
  {
    auto* cmd = app.add_subcommand(
        "judge", "Judge the pending comparisons of a plan, no fitting");
    auto overlay = std::make_shared<ConfigOverlay>();
    struct Args {
      std::string store, papers, panel;
      std::string plan = "calibration";  // calibration | scoring
      int samples_per_pair = 20;
      uint64_t plan_seed = 42;
      int concurrency = 4;
      RemoteOptions remote;
      JudgeOptions judge;
    };
    auto args = std::make_shared<Args>();
    overlay->bind(cmd->add_option("--store", args->store, "Store directory")
                      ->required(),
                  "store", args->store);
    overlay->bind(cmd->add_option("--papers", args->papers,
                                  "Corpus papers (JSON array or JSONL)")
                      ->required(),
                  "papers", args->papers);
    overlay->bind(cmd->add_option("--panel", args->panel,
                                  "Panel personas (JSON array)")
                      ->required(),
                  "panel", args->panel);
    overlay->bind(cmd->add_option("--plan", args->plan,
                                  "Which comparisons: calibration or scoring")
                      ->check(CLI::IsMember({"calibration", "scoring"})),
                  "plan", args->plan);
    overlay->bind(cmd->add_option("--samples-per-pair", args->samples_per_pair,
                                  "Papers judged per persona pair"),
                  "samples_per_pair", args->samples_per_pair);
    overlay->bind(cmd->add_option("--plan-seed", args->plan_seed,
                                  "Seed of the deterministic paper draw"),
                  "plan_seed", args->plan_seed);
    overlay->bind(cmd->add_option("--concurrency", args->concurrency,
                                  "Worker threads"),
                  "concurrency", args->concurrency);
    add_remote_flags(cmd, *overlay, args->remote);
    add_judge_flags(cmd, *overlay, args->judge);

    cmd->callback([args, overlay, common, &guard] {
      guard([&] {
        overlay->apply(common->config_path);
        const auto papers = load_papers_file(args->papers);
        if (papers.empty()) {
          std::cerr << "[warning] papers file is empty; nothing to judge\n";
          return;
        }
        const auto panel = load_panel_file(args->panel);
        const auto limiter = make_limiter(args->remote);
        auto judge = make_judge(args->judge, args->remote, limiter);

        CorpusStore store(args->store);
        const auto plan =
            args->plan == "calibration"
                ? plan_calibration(papers, panel, args->samples_per_pair,
                                   args->plan_seed)
                : plan_scoring(papers, panel);
        const auto pending = pending_work(plan, store.read_comparisons());

        std::unordered_map<std::string, std::string> texts;
        for (const auto& c : store.read_counterfactuals()) {
          texts.emplace(c.paper_id + "\x1f" + c.persona_id, c.text);
        }
        std::unordered_map<std::string, const PaperItem*> papers_by_id;
        for (const auto& p : papers) papers_by_id.emplace(p.id, &p);

        const ProgressFn progress = make_progress(common->progress);
        std::atomic<long long> judged{0};
        std::atomic<long long> done{0};
        std::mutex failures_mutex;
        std::vector<std::string> failures;

        parallel_for(pending.size(),
                     static_cast<size_t>(std::max(1, args->concurrency)),
                     [&](size_t i) {
          const ComparisonSlot& slot = pending[i];
          try {
            auto text_of = [&](const ItemRef& item) -> std::string {
              if (item.is_original()) {
                const auto it = papers_by_id.find(item.paper_id);
                if (it == papers_by_id.end()) {
                  throw DataIntegrityError("unknown paper " + item.paper_id);
                }
                return it->second->original_abstract;
              }
              const auto it =
                  texts.find(item.paper_id + "\x1f" + *item.persona_id);
              if (it == texts.end()) {
                throw DataIntegrityError(
                    "no counterfactual for " + item.paper_id + "/" +
                    *item.persona_id + "; run generate first");
              }
              return it->second;
            };
            JudgeRequest request;
            request.paper_id = slot.paper_id;
            request.item_a = slot.item_a;
            request.item_b = slot.item_b;
            request.text_a = text_of(slot.item_a);
            request.text_b = text_of(slot.item_b);
            request.template_id = args->judge.template_id;
            store.append_comparison(judge->judge_pair(request));
            ++judged;
          } catch (const Error& e) {
            std::lock_guard<std::mutex> lock(failures_mutex);
            failures.push_back(slot.paper_id + ": " + e.what());
          }
          if (progress) {
            progress(ProgressEvent{"judge", ++done,
                                   static_cast<long long>(pending.size()),
                                   slot.paper_id});
          }
        });

        print_failures(failures, "judgments");
        store.append_run_manifest(json{
            {"kind", "judge"},
            {"timestamp", rfc3339_utc_now()},
            {"plan", args->plan},
            {"planned", plan.size()},
            {"pending", pending.size()},
            {"judged", judged.load()},
            {"failures", failures.size()},
            {"template_id", args->judge.template_id},
        });
        std::cout << "judged " << judged.load() << " of " << pending.size()
                  << " pending (" << plan.size() << " planned)\n";
      });
    });
  }

  // score / score-adaptive
  for (const bool adaptive : {false, true}) {
    auto* cmd = app.add_subcommand(
        adaptive ? "score-adaptive" : "score",
        adaptive
            ? "Score query papers sequentially, stopping at the target precision"
            : "Score query papers against every panel persona, then MAP");
    auto overlay = std::make_shared<ConfigOverlay>();
    struct Args {
      std::string store, papers;
      double prior_mean = 0.0;
      double prior_std = 3.0;
      double stop_std = 0.5;
      int max_comparisons = 0;
      int concurrency = 4;
      RemoteOptions remote;
      JudgeOptions judge;
      GeneratorOptions generator;
    };
    auto args = std::make_shared<Args>();
    overlay->bind(cmd->add_option("--store", args->store, "Store directory")
                      ->required(),
                  "store", args->store);
    overlay->bind(cmd->add_option("--papers", args->papers,
                                  "Query papers (JSON array or JSONL)")
                      ->required(),
                  "papers", args->papers);
    overlay->bind(cmd->add_option("--prior-mean", args->prior_mean,
                                  "Gaussian prior mean"),
                  "prior_mean", args->prior_mean);
    overlay->bind(cmd->add_option("--prior-std", args->prior_std,
                                  "Gaussian prior standard deviation"),
                  "prior_std", args->prior_std);
    if (adaptive) {
      overlay->bind(cmd->add_option("--stop-std", args->stop_std,
                                    "Stop once the posterior std falls below this"),
                    "stop_std", args->stop_std);
      overlay->bind(cmd->add_option("--max-comparisons", args->max_comparisons,
                                    "Comparison cap per paper (0: panel size)"),
                    "max_comparisons", args->max_comparisons);
    }
    overlay->bind(cmd->add_option("--concurrency", args->concurrency,
                                  "Worker threads"),
                  "concurrency", args->concurrency);
    add_remote_flags(cmd, *overlay, args->remote);
    add_judge_flags(cmd, *overlay, args->judge);
    add_generator_flags(cmd, *overlay, args->generator);

    cmd->callback([args, overlay, common, adaptive, &guard] {
      guard([&] {
        overlay->apply(common->config_path);
        const auto papers = load_papers_file(args->papers);
        CorpusStore store(args->store);
        if (papers.empty()) {
          std::cerr << "[warning] papers file is empty; nothing to score\n";
          std::cout << "paper_id,score,std,mode\n";
          return;
        }
        const auto panel = calibrated_panel_from_store(store);
        const auto limiter = make_limiter(args->remote);
        auto generator =
            make_generator(args->generator, args->remote, limiter);
        auto judge = make_judge(args->judge, args->remote, limiter);

        ScoringRunOptions options;
        options.mode = adaptive ? "adaptive" : "map";
        options.prior.prior_mean = args->prior_mean;
        options.prior.prior_std = args->prior_std;
        options.adaptive_stop_std = args->stop_std;
        options.adaptive_max_comparisons = args->max_comparisons;
        options.template_id = args->judge.template_id;
        options.concurrency = args->concurrency;
        options.generation_max_attempts = args->generator.max_attempts;

        const ScoringRunOutcome outcome =
            run_scoring(store, papers, panel, *generator, *judge, options,
                        make_progress(common->progress));

        print_generation_failures(outcome.generation);
        print_failures(outcome.paper_failures, "papers");
        std::cout << "paper_id,score,std,mode\n";
        for (const auto& s : outcome.scores) {
          std::cout << s.paper_id << ',' << format_double(s.score) << ','
                    << format_double(s.stddev) << ',' << s.mode << '\n';
        }
      });
    });
  }

  // simulate
  {
    auto* cmd = app.add_subcommand(
        "simulate", "Synthetic end-to-end evaluation with known true scores");
    auto s = std::make_shared<std::string>();  // scenario file path
    auto out = std::make_shared<std::string>();
    auto flags = std::make_shared<json>(json::object());
    cmd->add_option("--scenario", *s, "Scenario JSON file");
    cmd->add_option("--out", *out, "Write the metrics CSV here instead of stdout");

    struct FlagSpec {
      const char* flag;
      const char* key;
      enum { Int, Uint, Double, Str } type;
    };
    static const FlagSpec specs[] = {
        {"--seed", "seed", FlagSpec::Uint},
        {"--num-seeds", "num_seeds", FlagSpec::Int},
        {"--panel-size", "panel_size", FlagSpec::Int},
        {"--panel-lo", "panel_lo", FlagSpec::Double},
        {"--panel-hi", "panel_hi", FlagSpec::Double},
        {"--samples-per-pair", "samples_per_pair", FlagSpec::Int},
        {"--noise", "noise", FlagSpec::Str},
        {"--query-count", "query_count", FlagSpec::Int},
        {"--query-mean", "query_mean", FlagSpec::Double},
        {"--query-std", "query_std", FlagSpec::Double},
        {"--robustness-trials", "robustness_trials", FlagSpec::Int},
        {"--stop-std", "adaptive_stop_std", FlagSpec::Double},
        {"--max-comparisons", "adaptive_max_comparisons", FlagSpec::Int},
        {"--fit-tolerance", "fit_tolerance", FlagSpec::Double},
        {"--fit-max-iterations", "fit_max_iterations", FlagSpec::Int},
        {"--fit-smoothing", "fit_smoothing", FlagSpec::Double},
        {"--prior-mean", "prior_mean", FlagSpec::Double},
        {"--prior-std", "prior_std", FlagSpec::Double},
    };
    for (const auto& spec : specs) {
      const std::string key = spec.key;
      switch (spec.type) {
        case FlagSpec::Int:
          cmd->add_option_function<int>(
              spec.flag, [flags, key](int v) { (*flags)[key] = v; },
              "Scenario override");
          break;
        case FlagSpec::Uint:
          cmd->add_option_function<uint64_t>(
              spec.flag, [flags, key](uint64_t v) { (*flags)[key] = v; },
              "Scenario override");
          break;
        case FlagSpec::Double:
          cmd->add_option_function<double>(
              spec.flag, [flags, key](double v) { (*flags)[key] = v; },
              "Scenario override");
          break;
        case FlagSpec::Str:
          cmd->add_option_function<std::string>(
              spec.flag,
              [flags, key](const std::string& v) { (*flags)[key] = v; },
              "Scenario override");
          break;
      }
    }

    cmd->callback([s, out, flags, common, &guard] {
      guard([&] {
        json scenario_json = json::object();
        if (!s->empty()) {
          scenario_json = load_json_file(*s, "scenario");
          if (!scenario_json.is_object()) {
            throw ConfigError("scenario must be a JSON object");
          }
        }
        for (const auto& [key, value] : flags->items()) {
          scenario_json[key] = value;
        }
        const sim::Scenario scenario = sim::scenario_from_json(scenario_json);
        const sim::ScenarioResult result = sim::run_scenario(scenario);
        write_text_output(*out, sim::metrics_csv(result));
      });
    });
  }

  // analyze
  {
    auto* cmd = app.add_subcommand(
        "analyze", "Descriptive statistics over the scores in a store");
    struct Args {
      std::string store;
      std::string mode = "all";  // all | map | adaptive
      std::string group_by;
      std::string lexicon;
      std::string out;
    };
    auto args = std::make_shared<Args>();
    cmd->add_option("--store", args->store, "Store directory")->required();
    cmd->add_option("--mode", args->mode, "Restrict to one scoring mode")
        ->check(CLI::IsMember({"all", "map", "adaptive"}));
    cmd->add_option("--group-by", args->group_by,
                    "Metadata key to group the summary by");
    cmd->add_option("--lexicon", args->lexicon,
                    "Promotional-word list; adds per-decile lexicon rates");
    cmd->add_option("--out", args->out, "Write the JSON report here");

    cmd->callback([args, common, &guard] {
      guard([&] {
        const CorpusStore store = CorpusStore::open_read_only(args->store);
        const auto all_scores = store.read_scores();
        const auto papers = store.read_papers();
        std::unordered_map<std::string, const PaperItem*> papers_by_id;
        for (const auto& p : papers) papers_by_id.emplace(p.id, &p);

        std::vector<QueryScore> scores;
        for (const auto& s : all_scores) {
          if (args->mode == "all" || s.mode == args->mode) scores.push_back(s);
        }

        json report{{"scores", scores.size()}};
        if (scores.empty()) {
          std::cerr << "[warning] store holds no scores"
                    << (args->mode == "all" ? "" : " for mode " + args->mode)
                    << '\n';
          write_text_output(args->out, report.dump(2) + "\n");
          return;
        }

        std::vector<ScoredItem> items;
        std::vector<double> values;
        for (const auto& s : scores) {
          ScoredItem item;
          item.paper_id = s.paper_id;
          item.score = s.score;
          item.stddev = s.stddev;
          if (const auto it = papers_by_id.find(s.paper_id);
              it != papers_by_id.end()) {
            item.metadata = it->second->metadata;
          }
          items.push_back(std::move(item));
          values.push_back(s.score);
        }

        const std::optional<std::string> group_by =
            args->group_by.empty() ? std::nullopt
                                   : std::optional<std::string>(args->group_by);
        json summaries = json::array();
        for (const auto& g : score_summary(items, group_by)) {
          summaries.push_back(group_summary_json(g));
        }
        report["summary"] = std::move(summaries);

        if (values.size() >= 10) {
          std::vector<double> aux;
          const std::vector<double>* aux_ptr = nullptr;
          if (!args->lexicon.empty()) {
            const auto lexicon = load_lexicon_file(args->lexicon);
            bool complete = true;
            for (const auto& s : scores) {
              const auto it = papers_by_id.find(s.paper_id);
              if (it == papers_by_id.end()) {
                complete = false;
                break;
              }
              aux.push_back(
                  promotion_score(it->second->original_abstract, lexicon));
            }
            if (complete) {
              aux_ptr = &aux;
            } else {
              std::cerr << "[warning] some scored papers are missing from the "
                           "store; skipping lexicon rates\n";
            }
          }
          json deciles = json::array();
          for (const auto& row : decile_table(values, aux_ptr)) {
            json r{{"group", row.group},
                   {"count", row.count},
                   {"range", {row.range_low, row.range_high}},
                   {"mean_score", row.mean_score}};
            if (row.mean_aux) r["mean_lexicon_rate"] = *row.mean_aux;
            deciles.push_back(std::move(r));
          }
          report["deciles"] = std::move(deciles);
        }

        std::vector<ComparisonRecord> query_comparisons;
        for (const auto& r : store.read_comparisons()) {
          if (r.item_a.is_original() != r.item_b.is_original()) {
            query_comparisons.push_back(r);
          }
        }
        if (!query_comparisons.empty()) {
          const WinRateReport rates = persona_win_rates(query_comparisons);
          json by_persona = json::object();
          for (const auto& [pid, entry] : rates.by_persona) {
            by_persona[pid] = json{{"rate", entry.rate},
                                   {"wins", entry.wins},
                                   {"comparisons", entry.comparisons}};
          }
          report["persona_win_rates"] = std::move(by_persona);
        }

        write_text_output(args->out, report.dump(2) + "\n");
      });
    });
  }

  // export
  {
    auto* cmd = app.add_subcommand(
        "export", "Tidy per-paper CSV of scores and metadata");
    struct Args {
      std::string store;
      std::string mode = "all";
      std::string out;
    };
    auto args = std::make_shared<Args>();
    cmd->add_option("--store", args->store, "Store directory")->required();
    cmd->add_option("--mode", args->mode, "Restrict to one scoring mode")
        ->check(CLI::IsMember({"all", "map", "adaptive"}));
    cmd->add_option("--out", args->out, "Write the CSV here instead of stdout");

    cmd->callback([args, common, &guard] {
      guard([&] {
        const CorpusStore store = CorpusStore::open_read_only(args->store);
        std::vector<QueryScore> scores;
        for (const auto& s : store.read_scores()) {
          if (args->mode == "all" || s.mode == args->mode) scores.push_back(s);
        }
        if (scores.empty()) {
          std::cerr << "[warning] store holds no scores to export\n";
        }
        write_text_output(args->out, scores_to_csv(scores, store.read_papers()));
      });
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return exit_code;
}
