#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rewardlab/council.hpp"
#include "rewardlab/env.hpp"
#include "rewardlab/env_io.hpp"
#include "rewardlab/generator.hpp"
#include "rewardlab/llm.hpp"
#include "rewardlab/llm_http.hpp"
#include "rewardlab/prompts.hpp"
#include "rewardlab/sweep.hpp"
#include "rewardlab/table.hpp"
#include "rewardlab/trainer.hpp"

namespace rewardlab::run {

namespace fs = std::filesystem;

struct DegenerateBaseline : std::runtime_error {
    explicit DegenerateBaseline(const std::string& what) : std::runtime_error(what) {}
};

struct ReportError : std::runtime_error {
    explicit ReportError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class Mode { Autonomous, WithMetrics };

inline std::string_view to_string(Mode m) {
    return m == Mode::Autonomous ? "autonomous" : "with_metrics";
}

inline Mode mode_from_string(const std::string& s) {
    if (s == "autonomous") return Mode::Autonomous;
    if (s == "with_metrics") return Mode::WithMetrics;
    throw std::invalid_argument("unknown mode: " + s);
}

struct BackendConfig {
    std::string kind = "mock";  // mock | replay | http
    std::string model = "gpt-4.1-nano";
    std::string base_url;                            // http
    std::string api_key_env = "REWARDLAB_API_KEY";   // http
    std::string transcript;  // replay: file, directory, or pattern with {run}
    std::string script;      // mock: JSON array file, may contain {run}
    bool record = false;     // save transcript.jsonl into the run directory
};

struct RunConfig {
    std::string env_name = "cartpole";
    Mode mode = Mode::Autonomous;
    int iterations = 5;
    int candidates_per_iteration = 8;
    int analyzers = 3;
    int metrics_per_analyzer = 1;
    int runs = 10;
    std::uint64_t train_seed = 42;
    std::vector<std::uint64_t> test_seeds = {3120, 2190, 6838, 4024};
    int test_instances = 128;
    int select_episodes = 4;  // post-training rollout fed to the council
    int jobs = 0;             // 0 = hardware concurrency
    BackendConfig backend;
    int train_generations = 0;  // 0 = per-env default
    std::string out_dir = "runs";
    std::string prompts_dir;  // optional template overrides
    std::string env_file;     // optional environment definition overrides

    void validate() const {
        if (iterations < 1 || candidates_per_iteration < 1 || analyzers < 1 ||
            metrics_per_analyzer < 1 || runs < 1 || test_instances < 1 || select_episodes < 1)
            throw std::invalid_argument("all run counts must be >= 1");
        for (std::uint64_t s : test_seeds)
            if (s == train_seed)
                throw std::invalid_argument("test seeds must be disjoint from the train seed");
    }
};

inline nlohmann::json config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["env"] = c.env_name;
    j["mode"] = std::string(to_string(c.mode));
    j["iterations"] = c.iterations;
    j["candidates_per_iteration"] = c.candidates_per_iteration;
    j["analyzers"] = c.analyzers;
    j["metrics_per_analyzer"] = c.metrics_per_analyzer;
    j["runs"] = c.runs;
    j["train_seed"] = c.train_seed;
    j["test_seeds"] = c.test_seeds;
    j["test_instances"] = c.test_instances;
    j["select_episodes"] = c.select_episodes;
    j["jobs"] = c.jobs;
    j["train_generations"] = c.train_generations;
    j["out_dir"] = c.out_dir;
    j["prompts_dir"] = c.prompts_dir;
    j["env_file"] = c.env_file;
    j["backend"] = {{"kind", c.backend.kind},         {"model", c.backend.model},
                    {"base_url", c.backend.base_url}, {"api_key_env", c.backend.api_key_env},
                    {"transcript", c.backend.transcript}, {"script", c.backend.script},
                    {"record", c.backend.record}};
    return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    if (j.contains("env")) c.env_name = j.at("env").get<std::string>();
    if (j.contains("mode")) c.mode = mode_from_string(j.at("mode").get<std::string>());
    if (j.contains("iterations")) c.iterations = j.at("iterations").get<int>();
    if (j.contains("candidates_per_iteration"))
        c.candidates_per_iteration = j.at("candidates_per_iteration").get<int>();
    if (j.contains("analyzers")) c.analyzers = j.at("analyzers").get<int>();
    if (j.contains("metrics_per_analyzer"))
        c.metrics_per_analyzer = j.at("metrics_per_analyzer").get<int>();
    if (j.contains("runs")) c.runs = j.at("runs").get<int>();
    if (j.contains("train_seed")) c.train_seed = j.at("train_seed").get<std::uint64_t>();
    if (j.contains("test_seeds")) c.test_seeds = j.at("test_seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("test_instances")) c.test_instances = j.at("test_instances").get<int>();
    if (j.contains("select_episodes")) c.select_episodes = j.at("select_episodes").get<int>();
    if (j.contains("jobs")) c.jobs = j.at("jobs").get<int>();
    if (j.contains("train_generations")) c.train_generations = j.at("train_generations").get<int>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("prompts_dir")) c.prompts_dir = j.at("prompts_dir").get<std::string>();
    if (j.contains("env_file")) c.env_file = j.at("env_file").get<std::string>();
    if (j.contains("backend")) {
        const auto& b = j.at("backend");
        if (b.contains("kind")) c.backend.kind = b.at("kind").get<std::string>();
        if (b.contains("model")) c.backend.model = b.at("model").get<std::string>();
        if (b.contains("base_url")) c.backend.base_url = b.at("base_url").get<std::string>();
        if (b.contains("api_key_env")) c.backend.api_key_env = b.at("api_key_env").get<std::string>();
        if (b.contains("transcript")) c.backend.transcript = b.at("transcript").get<std::string>();
        if (b.contains("script")) c.backend.script = b.at("script").get<std::string>();
        if (b.contains("record")) c.backend.record = b.at("record").get<bool>();
    }
    return c;
}

inline RunConfig load_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read config file: " + path.string());
    return config_from_json(nlohmann::json::parse(in));
}

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

namespace detail {

inline void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    write_text(path, j.dump(2) + "\n");
}

inline std::string substitute_run(std::string text, int run_index) {
    const std::string token = "{run}";
    std::size_t pos;
    while ((pos = text.find(token)) != std::string::npos)
        text.replace(pos, token.size(), std::to_string(run_index));
    return text;
}

// Order-preserving parallel map with a bounded number of in-flight jobs.
template <typename T, typename Fn>
auto parallel_map(const std::vector<T>& items, Fn fn, int jobs)
    -> std::vector<decltype(fn(items[0]))> {
    using R = decltype(fn(items[0]));
    if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
    if (jobs < 1) jobs = 1;
    std::vector<R> results(items.size());
    std::size_t next = 0;
    while (next < items.size()) {
        std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(jobs),
                                                  items.size() - next);
        std::vector<std::future<R>> futures;
        for (std::size_t i = 0; i < batch; ++i)
            futures.push_back(std::async(std::launch::async, fn, std::cref(items[next + i])));
        for (std::size_t i = 0; i < batch; ++i) results[next + i] = futures[i].get();
        next += batch;
    }
    return results;
}

inline std::string format_g(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Normalized scoring
// ---------------------------------------------------------------------------

// Direction-aware relative improvement over the baseline: zero at the
// baseline, positive always means improvement.
inline double normalize(double value, double baseline, dsl::Direction direction) {
    if (std::fabs(baseline) < 1e-12)
        throw DegenerateBaseline("baseline too close to zero for normalized scoring");
    double gain = direction == dsl::Direction::Maximize ? value - baseline : baseline - value;
    return gain / std::fabs(baseline);
}

// ---------------------------------------------------------------------------
// Gateway construction
// ---------------------------------------------------------------------------

inline std::unique_ptr<llm::Gateway> make_gateway(const BackendConfig& config, int run_index) {
    if (config.kind == "mock") {
        std::vector<std::string> script;
        if (!config.script.empty()) {
            fs::path path = detail::substitute_run(config.script, run_index);
            std::ifstream in(path, std::ios::binary);
            if (!in) throw std::runtime_error("cannot read mock script: " + path.string());
            nlohmann::json j = nlohmann::json::parse(in);
            script = j.get<std::vector<std::string>>();
        }
        return std::make_unique<llm::Gateway>(std::make_unique<llm::MockBackend>(script));
    }
    if (config.kind == "replay") {
        fs::path path = detail::substitute_run(config.transcript, run_index);
        if (fs::is_directory(path)) path /= "run" + std::to_string(run_index) + ".jsonl";
        return std::make_unique<llm::Gateway>(
            std::make_unique<llm::ReplayBackend>(llm::Transcript::load(path.string())));
    }
    if (config.kind == "http") {
        llm::HttpBackendConfig http;
        http.base_url = config.base_url;
        if (const char* key = std::getenv(config.api_key_env.c_str())) http.api_key = key;
        return std::make_unique<llm::Gateway>(std::make_unique<llm::HttpBackend>(http));
    }
    throw std::invalid_argument("unknown backend kind: " + config.kind);
}

// ---------------------------------------------------------------------------
// Discovery
// ---------------------------------------------------------------------------

struct IterationLog {
    int iteration = 1;
    std::vector<gen::CandidateRecord> candidates;
    std::map<int, double> gt_values;  // per trained candidate (logged, never trained on)
    std::optional<council::SelectionResult> selection;  // autonomous mode
    int winner_id = -1;
    std::string feedback;  // metric feedback handed to the next mutation
};

struct DiscoveryResult {
    int run_index = 0;
    std::string run_dir;
    gen::StateActionMap map;
    std::optional<council::Council> council;
    std::vector<IterationLog> iterations;
    gen::CandidateRecord winner;
    int llm_calls = 0;
    bool ok = true;
    std::string error;
};

// Upper bound on LLM calls for one autonomous run (the budget invariant):
// mapping (1 + 1 re-prompt) + per-candidate generation with repairs +
// council planning/coding with repairs, direction re-prompts and one retry.
inline int llm_call_upper_bound(const RunConfig& c, int max_attempts = 3) {
    int mapping = 2;
    int generation = c.iterations * c.candidates_per_iteration * (1 + (max_attempts - 1));
    int per_metric = max_attempts /* coder calls */ + max_attempts /* direction re-prompts */;
    int per_analyzer_attempt = 2 /* planner turns */ + 1 /* proposal re-prompt */ +
                               c.metrics_per_analyzer * per_metric;
    int council_calls = c.mode == Mode::Autonomous
                            ? c.analyzers * 2 /* one retry */ * per_analyzer_attempt
                            : 0;
    return mapping + generation + council_calls;
}

namespace detail {

inline trainer::TrainConfig train_config_for(const envs::EnvSpec& env, const RunConfig& config,
                                             std::uint64_t seed) {
    auto tc = trainer::TrainConfig::defaults_for(env, seed);
    if (config.train_generations > 0) tc.generations = config.train_generations;
    return tc;
}

inline nlohmann::json sanity_to_json(const gen::SanityReport& s) {
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& [attempt, message] : s.failures)
        failures.push_back({{"attempt", attempt}, {"message", message}});
    return {{"passed", s.passed}, {"attempts", s.attempts}, {"failures", failures}};
}

inline nlohmann::json selection_to_json(const council::SelectionResult& s) {
    nlohmann::json tally = nlohmann::json::object();
    for (const auto& [id, votes] : s.tally) tally[std::to_string(id)] = votes;
    return {{"winner", s.winner_id},
            {"rankings", s.rankings},
            {"tally", tally},
            {"tie_broken", s.tie_broken}};
}

inline nlohmann::json council_to_json(const council::Council& c) {
    nlohmann::json analyzers = nlohmann::json::array();
    for (const auto& a : c.analyzers) {
        nlohmann::json extras = nlohmann::json::array();
        for (const auto& m : a.extra_metrics)
            extras.push_back({{"expr", m.source_text},
                              {"aggregator", std::string(dsl::to_string(m.aggregator))},
                              {"direction", std::string(dsl::to_string(m.direction))}});
        analyzers.push_back({{"index", a.index},
                             {"measurement", a.proposal.description},
                             {"rationale", a.proposal.rationale},
                             {"criteria", a.proposal.criteria},
                             {"expr", a.metric.source_text},
                             {"aggregator", std::string(dsl::to_string(a.metric.aggregator))},
                             {"direction", std::string(dsl::to_string(a.metric.direction))},
                             {"extra_metrics", extras}});
    }
    return {{"analyzers", analyzers}};
}

// Reads a persisted council back; selection stays replayable with no backend.
inline council::Council council_from_json(const nlohmann::json& j) {
    council::Council c;
    for (const auto& a : j.at("analyzers")) {
        council::AnalyzerSubmodule sub;
        sub.index = a.at("index").get<int>();
        sub.proposal = {a.at("measurement").get<std::string>(),
                        a.at("rationale").get<std::string>(),
                        a.at("criteria").get<std::string>()};
        auto parse_metric = [](const nlohmann::json& m, const std::string& expr_key) {
            dsl::MetricProgram program;
            program.source_text = m.at(expr_key).get<std::string>();
            auto parsed = dsl::parse_expr(program.source_text);
            if (!parsed.ok()) throw std::runtime_error("bad metric expr in council file");
            program.step_expr = parsed.expr;
            if (!dsl::parse_aggregator(m.at("aggregator").get<std::string>(), program.aggregator))
                throw std::runtime_error("bad aggregator in council file");
            if (!dsl::parse_direction(m.at("direction").get<std::string>(), program.direction))
                throw std::runtime_error("bad direction in council file");
            return program;
        };
        sub.metric = parse_metric(a, "expr");
        for (const auto& m : a.at("extra_metrics")) sub.extra_metrics.push_back(parse_metric(m, "expr"));
        c.analyzers.push_back(std::move(sub));
    }
    return c;
}

}  // namespace detail

// One full discovery run: reward engineering (mapping, initial proposal,
// council construction), then elitist reward-optimization iterations with
// selection by council vote (autonomous) or by the predefined ground-truth
// metric (with_metrics).
inline DiscoveryResult discover(const RunConfig& config, int run_index = 0) {
    config.validate();
    const envs::EnvSpec env = config.env_file.empty()
                                  ? envs::make_env(config.env_name)
                                  : envs::make_env_from_file(config.env_file, config.env_name);

    DiscoveryResult result;
    result.run_index = run_index;
    fs::path run_dir = fs::path(config.out_dir) / env.name / std::string(to_string(config.mode)) /
                       ("run" + std::to_string(run_index));
    fs::create_directories(run_dir / "candidates");
    fs::create_directories(run_dir / "tables");
    fs::create_directories(run_dir / "selections");
    fs::create_directories(run_dir / "sets");
    result.run_dir = run_dir.string();
    detail::write_json(run_dir / "config.json", config_to_json(config));

    auto gateway = make_gateway(config.backend, run_index);
    llm::Transcript recorded;
    if (config.backend.record) gateway->record_to(&recorded);

    auto prompt_library = config.prompts_dir.empty()
                              ? prompts::PromptLibrary::builtin()
                              : prompts::PromptLibrary::from_dir(config.prompts_dir);

    gen::GeneratorConfig gen_config;
    gen_config.model = config.backend.model;
    gen::Generator generator(*gateway, prompt_library, gen_config);

    // Reward engineering: mapping, sample data, council.
    result.map = generator.map_system(env);
    detail::write_json(run_dir / "state_action_map.json",
                       {{"states", result.map.schema.state_names},
                        {"actions", result.map.schema.action_names}});

    const TrajectoryTable sample =
        trainer::sample_rollout(env, config.train_seed, 64, &result.map.schema);

    // Reward optimization iterations. The council is constructed exactly once,
    // within iteration 1 after the first execution data exists and before the
    // first selection, and reused unchanged afterwards.
    std::optional<gen::CandidateRecord> best;
    std::string feedback;
    for (int iter = 1; iter <= config.iterations; ++iter) {
        IterationLog log;
        log.iteration = iter;
        log.candidates =
            iter == 1 ? generator.propose_initial(env, result.map, config.candidates_per_iteration,
                                                  sample)
                      : generator.mutate_best(*best, result.map, feedback,
                                              config.candidates_per_iteration, sample, iter);

        for (const auto& c : log.candidates)
            detail::write_text(run_dir / "candidates" /
                                   ("iter" + std::to_string(iter) + "_cand" +
                                    std::to_string(c.id) + ".txt"),
                               c.source_text + "\n");

        // Train every passing candidate and collect its selection rollout.
        std::vector<const gen::CandidateRecord*> trainable;
        for (const auto& c : log.candidates)
            if (c.sanity.passed) trainable.push_back(&c);

        auto train_one = [&](const gen::CandidateRecord* const& c) {
            auto tc = detail::train_config_for(env, config, config.train_seed);
            auto policy = trainer::train(env, *c->program, tc, &result.map.schema);
            return trainer::rollout(env, policy, config.select_episodes, config.train_seed,
                                    &result.map.schema);
        };
        auto tables = detail::parallel_map(trainable, train_one, config.jobs);

        std::map<int, TrajectoryTable> by_id;
        for (std::size_t i = 0; i < trainable.size(); ++i)
            by_id.emplace(trainable[i]->id, std::move(tables[i]));

        council::CandidateTables table_ptrs;
        for (auto& [id, table] : by_id) {
            table_ptrs.emplace(id, &table);
            table.write_csv((run_dir / "tables" /
                             ("cand" + std::to_string(id) + "_iter" + std::to_string(iter) +
                              "_select_seed" + std::to_string(config.train_seed) + ".csv"))
                                .string());
            log.gt_values[id] = envs::ground_truth(env, table);
        }

        if (config.mode == Mode::Autonomous) {
            if (!result.council) {
                council::CouncilConfig cc;
                cc.model = config.backend.model;
                council::CouncilBuilder builder(*gateway, prompt_library, cc);
                result.council = builder.build(env, result.map.schema, config.analyzers,
                                               config.metrics_per_analyzer, sample);
                detail::write_json(run_dir / "council.json",
                                   detail::council_to_json(*result.council));
            }
            log.selection = council::select(*result.council, table_ptrs);
            log.winner_id = log.selection->winner_id;
        } else {
            log.winner_id = council::select_with_ground_truth(env, table_ptrs);
        }

        for (const auto& c : log.candidates)
            if (c.id == log.winner_id) best = c;

        feedback = config.mode == Mode::Autonomous
                       ? council::describe_scores(*result.council, by_id.at(log.winner_id))
                       : "ground truth (" +
                             std::string(dsl::to_string(env.ground_truth_metric.direction)) +
                             "): " + detail::format_g(log.gt_values.at(log.winner_id), 12);
        log.feedback = feedback;

        // Persist the selection and the experiment set for later sweeps.
        nlohmann::json sel;
        sel["iteration"] = iter;
        sel["winner"] = log.winner_id;
        sel["mode"] = std::string(to_string(config.mode));
        nlohmann::json gts = nlohmann::json::object();
        for (const auto& [id, v] : log.gt_values) gts[std::to_string(id)] = v;
        sel["ground_truth"] = gts;
        if (log.selection) sel["vote"] = detail::selection_to_json(*log.selection);
        sel["feedback"] = log.feedback;
        detail::write_json(run_dir / "selections" / ("iter" + std::to_string(iter) + ".json"),
                           sel);

        sweep::ExperimentSet set;
        for (const auto& [id, v] : log.gt_values) {
            set.candidate_ids.push_back(id);
            set.gt_values.push_back(v);
        }
        set.direction = env.ground_truth_metric.direction;
        sweep::save_set(set, run_dir / "sets" / ("iter" + std::to_string(iter)));

        result.iterations.push_back(std::move(log));
    }

    result.winner = *best;
    result.llm_calls = gateway->calls();

    nlohmann::json summary;
    summary["env"] = env.name;
    summary["mode"] = std::string(to_string(config.mode));
    summary["run"] = run_index;
    summary["llm_calls"] = result.llm_calls;
    summary["winner"] = {{"id", result.winner.id},
                         {"iteration", result.winner.iteration},
                         {"source", result.winner.source_text}};
    summary["seed_audit"] = {{"train_seed", config.train_seed},
                             {"select_episodes", config.select_episodes},
                             {"test_seeds_used_during_discovery", nlohmann::json::array()}};
    nlohmann::json iterations = nlohmann::json::array();
    for (const auto& log : result.iterations) {
        nlohmann::json cands = nlohmann::json::array();
        for (const auto& c : log.candidates) {
            nlohmann::json jc = {{"id", c.id},
                                 {"iteration", c.iteration},
                                 {"source", c.source_text},
                                 {"sanity", detail::sanity_to_json(c.sanity)}};
            if (c.lineage) jc["lineage"] = *c.lineage;
            cands.push_back(jc);
        }
        iterations.push_back({{"iteration", log.iteration},
                              {"winner", log.winner_id},
                              {"candidates", cands}});
    }
    summary["iterations"] = iterations;
    detail::write_json(run_dir / "discovery.json", summary);

    if (config.backend.record) recorded.save((run_dir / "transcript.jsonl").string());
    return result;
}

// `runs` independent discovery runs; failures are recorded, not fatal. A
// failed run leaves its partial artifacts plus an error.txt marker on disk.
inline std::vector<DiscoveryResult> multi_run(const RunConfig& config) {
    std::vector<DiscoveryResult> results;
    for (int k = 0; k < config.runs; ++k) {
        try {
            results.push_back(discover(config, k));
        } catch (const std::exception& ex) {
            DiscoveryResult failed;
            failed.run_index = k;
            failed.ok = false;
            failed.error = ex.what();
            fs::path run_dir = fs::path(config.out_dir) / config.env_name /
                               std::string(to_string(config.mode)) / ("run" + std::to_string(k));
            failed.run_dir = run_dir.string();
            fs::create_directories(run_dir);
            detail::write_text(run_dir / "error.txt", failed.error + "\n");
            results.push_back(std::move(failed));
        }
    }
    return results;
}

// ---------------------------------------------------------------------------
// Evaluation (PP / GP) and reporting
// ---------------------------------------------------------------------------

struct CandidateEvaluation {
    double pp = 0.0;
    std::uint64_t pp_seed = 0;
    std::vector<double> gp_scores;
    std::vector<std::uint64_t> gp_seeds;
    double gp_mean = 0.0;
    double gp_std = 0.0;  // population standard deviation over the unseen seeds
};

// PP: train and test on the optimization seed. GP: one independent train+test
// per unseen seed; mean and spread over those scores. Ground-truth metrics
// are computed on test rollouts only, never seen by training.
inline CandidateEvaluation evaluate_candidate(const envs::EnvSpec& env,
                                              const dsl::RewardProgram& program,
                                              const dsl::Schema& schema,
                                              const RunConfig& config) {
    CandidateEvaluation eval;
    eval.pp_seed = config.train_seed;
    eval.gp_seeds = config.test_seeds;

    std::vector<std::uint64_t> seeds;
    seeds.push_back(config.train_seed);
    for (std::uint64_t s : config.test_seeds) seeds.push_back(s);

    auto run_seed = [&](const std::uint64_t& seed) {
        auto tc = detail::train_config_for(env, config, seed);
        auto policy = trainer::train(env, program, tc, &schema);
        return trainer::test_parallel(env, policy, config.test_instances, seed, &schema)
            .ground_truth;
    };
    auto scores = detail::parallel_map(seeds, run_seed, config.jobs);

    eval.pp = scores[0];
    eval.gp_scores.assign(scores.begin() + 1, scores.end());
    double sum = 0.0;
    for (double v : eval.gp_scores) sum += v;
    eval.gp_mean = sum / static_cast<double>(eval.gp_scores.size());
    double var = 0.0;
    for (double v : eval.gp_scores) var += (v - eval.gp_mean) * (v - eval.gp_mean);
    eval.gp_std = std::sqrt(var / static_cast<double>(eval.gp_scores.size()));
    return eval;
}

struct RunEvaluation {
    int run_index = 0;
    bool ok = false;
    std::string error;
    std::string winner_source;
    int llm_calls = 0;
    CandidateEvaluation eval;
    double normalized_pp = 0.0;
    double normalized_gp = 0.0;
};

struct BatchReport {
    std::string env_name;
    Mode mode = Mode::Autonomous;
    dsl::Direction direction = dsl::Direction::Minimize;
    CandidateEvaluation baseline;
    std::vector<RunEvaluation> runs;
    int best_run = -1;  // highest normalized GP among successful runs
};

namespace detail {

inline nlohmann::json eval_to_json(const CandidateEvaluation& e) {
    return {{"pp", e.pp},
            {"pp_seed", e.pp_seed},
            {"gp_scores", e.gp_scores},
            {"gp_seeds", e.gp_seeds},
            {"gp_mean", e.gp_mean},
            {"gp_std", e.gp_std}};
}

inline CandidateEvaluation eval_from_json(const nlohmann::json& j) {
    CandidateEvaluation e;
    e.pp = j.at("pp").get<double>();
    e.pp_seed = j.at("pp_seed").get<std::uint64_t>();
    e.gp_scores = j.at("gp_scores").get<std::vector<double>>();
    e.gp_seeds = j.at("gp_seeds").get<std::vector<std::uint64_t>>();
    e.gp_mean = j.at("gp_mean").get<double>();
    e.gp_std = j.at("gp_std").get<double>();
    return e;
}

}  // namespace detail

// Evaluates every successful run's winner plus the baseline reward (same
// code path), normalizes against the baseline GP, picks the best run by GP.
inline BatchReport evaluate_runs(const RunConfig& config,
                                 const std::vector<DiscoveryResult>& results) {
    const envs::EnvSpec env = config.env_file.empty()
                                  ? envs::make_env(config.env_name)
                                  : envs::make_env_from_file(config.env_file, config.env_name);
    BatchReport report;
    report.env_name = env.name;
    report.mode = config.mode;
    report.direction = env.ground_truth_metric.direction;

    auto baseline_parsed = dsl::parse_expr(env.baseline_reward_text);
    if (!baseline_parsed.ok())
        throw std::logic_error("baseline reward text failed to parse for " + env.name);
    dsl::RewardProgram baseline_program{baseline_parsed.expr, env.baseline_reward_text};
    report.baseline = evaluate_candidate(env, baseline_program, env.schema, config);

    double best_norm_gp = 0.0;
    for (const auto& r : results) {
        RunEvaluation re;
        re.run_index = r.run_index;
        re.ok = r.ok;
        re.error = r.error;
        if (r.ok) {
            re.winner_source = r.winner.source_text;
            re.llm_calls = r.llm_calls;
            re.eval = evaluate_candidate(env, *r.winner.program, r.map.schema, config);
            re.normalized_pp = normalize(re.eval.pp, report.baseline.gp_mean, report.direction);
            re.normalized_gp =
                normalize(re.eval.gp_mean, report.baseline.gp_mean, report.direction);
            if (report.best_run < 0 || re.normalized_gp > best_norm_gp) {
                report.best_run = r.run_index;
                best_norm_gp = re.normalized_gp;
            }
            detail::write_json(fs::path(r.run_dir) / "evaluation.json",
                               {{"winner_source", re.winner_source},
                                {"llm_calls", re.llm_calls},
                                {"evaluation", detail::eval_to_json(re.eval)},
                                {"normalized_pp", re.normalized_pp},
                                {"normalized_gp", re.normalized_gp}});
        }
        report.runs.push_back(std::move(re));
    }
    return report;
}

namespace detail {

struct Moments {
    double mean = 0.0;
    double stddev = 0.0;
};

inline Moments moments(const std::vector<double>& values) {
    Moments m;
    if (values.empty()) return m;
    for (double v : values) m.mean += v;
    m.mean /= static_cast<double>(values.size());
    for (double v : values) m.stddev += (v - m.mean) * (v - m.mean);
    m.stddev = std::sqrt(m.stddev / static_cast<double>(values.size()));
    return m;
}

}  // namespace detail

inline nlohmann::json report_to_json(const BatchReport& report) {
    nlohmann::json j;
    j["env"] = report.env_name;
    j["mode"] = std::string(to_string(report.mode));
    j["direction"] = std::string(dsl::to_string(report.direction));
    j["baseline"] = detail::eval_to_json(report.baseline);

    nlohmann::json runs = nlohmann::json::array();
    std::vector<double> pps, gps, norm_pps, norm_gps;
    for (const auto& r : report.runs) {
        nlohmann::json jr;
        jr["run"] = r.run_index;
        jr["ok"] = r.ok;
        if (r.ok) {
            jr["winner_source"] = r.winner_source;
            jr["llm_calls"] = r.llm_calls;
            jr["evaluation"] = detail::eval_to_json(r.eval);
            jr["normalized_pp"] = r.normalized_pp;
            jr["normalized_gp"] = r.normalized_gp;
            pps.push_back(r.eval.pp);
            gps.push_back(r.eval.gp_mean);
            norm_pps.push_back(r.normalized_pp);
            norm_gps.push_back(r.normalized_gp);
        } else {
            jr["error"] = r.error;
        }
        runs.push_back(std::move(jr));
    }
    j["runs"] = runs;
    j["best_run"] = report.best_run;

    auto pp_m = detail::moments(pps), gp_m = detail::moments(gps);
    auto npp_m = detail::moments(norm_pps), ngp_m = detail::moments(norm_gps);
    j["aggregate"] = {{"successful_runs", pps.size()},
                      {"mean_pp", pp_m.mean},
                      {"std_pp", pp_m.stddev},
                      {"mean_gp", gp_m.mean},
                      {"std_gp", gp_m.stddev},
                      {"mean_normalized_pp", npp_m.mean},
                      {"mean_normalized_gp", ngp_m.mean}};
    return j;
}

inline std::string report_to_text(const BatchReport& report) {
    using detail::format_g;
    std::string out;
    out += report.env_name + " (" + std::string(to_string(report.mode)) +
           ") — ground truth direction: " + std::string(dsl::to_string(report.direction)) + "\n";
    out += "row              PP              GP\n";
    out += "baseline         -               " + format_g(report.baseline.gp_mean) + " +/- " +
           format_g(report.baseline.gp_std) + "\n";

    const RunEvaluation* best = nullptr;
    std::vector<double> pps, gps;
    for (const auto& r : report.runs) {
        if (!r.ok) continue;
        if (r.run_index == report.best_run) best = &r;
        pps.push_back(r.eval.pp);
        gps.push_back(r.eval.gp_mean);
    }
    if (best) {
        out += "best             " + format_g(best->eval.pp) + "      " +
               format_g(best->eval.gp_mean) + " +/- " + format_g(best->eval.gp_std) + "\n";
    }
    auto pp_m = detail::moments(pps), gp_m = detail::moments(gps);
    out += "mean             " + format_g(pp_m.mean) + " +/- " + format_g(pp_m.stddev) + "  " +
           format_g(gp_m.mean) + " +/- " + format_g(gp_m.stddev) + "\n";
    if (best) {
        out += "normalized best  " + format_g(best->normalized_pp) + "      " +
               format_g(best->normalized_gp) + "\n";
    }
    return out;
}

// Writes report.json, report.txt and baseline_evaluation.json under the
// batch directory. Refuses empty results before touching any file.
inline void write_report(const BatchReport& report, const fs::path& dir) {
    bool any_ok = false;
    for (const auto& r : report.runs) any_ok |= r.ok;
    if (report.runs.empty() || !any_ok)
        throw ReportError("no successful runs to report");
    fs::create_directories(dir);
    detail::write_json(dir / "report.json", report_to_json(report));
    detail::write_json(dir / "baseline_evaluation.json", detail::eval_to_json(report.baseline));
    detail::write_text(dir / "report.txt", report_to_text(report));
}

// Re-renders the batch report from per-run evaluation.json files.
inline BatchReport report_from_runs_dir(const fs::path& dir) {
    BatchReport report;
    fs::path baseline_path = dir / "baseline_evaluation.json";
    if (!fs::exists(baseline_path))
        throw ReportError("missing baseline_evaluation.json under " + dir.string());
    {
        std::ifstream in(baseline_path, std::ios::binary);
        report.baseline = detail::eval_from_json(nlohmann::json::parse(in));
    }
    report.env_name = dir.parent_path().filename().string();
    report.mode = mode_from_string(dir.filename().string());

    // direction from the environment registry
    report.direction = envs::make_env(report.env_name).ground_truth_metric.direction;

    std::vector<fs::path> run_dirs;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_directory() && entry.path().filename().string().rfind("run", 0) == 0)
            run_dirs.push_back(entry.path());
    std::sort(run_dirs.begin(), run_dirs.end());

    double best_norm_gp = 0.0;
    for (const auto& run_dir : run_dirs) {
        RunEvaluation re;
        re.run_index = std::stoi(run_dir.filename().string().substr(3));
        fs::path eval_path = run_dir / "evaluation.json";
        if (fs::exists(eval_path)) {
            std::ifstream in(eval_path, std::ios::binary);
            nlohmann::json j = nlohmann::json::parse(in);
            re.ok = true;
            re.winner_source = j.at("winner_source").get<std::string>();
            re.llm_calls = j.at("llm_calls").get<int>();
            re.eval = detail::eval_from_json(j.at("evaluation"));
            re.normalized_pp = j.at("normalized_pp").get<double>();
            re.normalized_gp = j.at("normalized_gp").get<double>();
            if (report.best_run < 0 || re.normalized_gp > best_norm_gp) {
                report.best_run = re.run_index;
                best_norm_gp = re.normalized_gp;
            }
        } else {
            re.error = "no evaluation.json";
        }
        report.runs.push_back(std::move(re));
    }
    if (report.runs.empty()) throw ReportError("no run directories under " + dir.string());
    return report;
}

// Full protocol: multi-run discovery, evaluation of every winner plus the
// baseline, reports on disk.
inline BatchReport run_protocol(const RunConfig& config) {
    auto results = multi_run(config);
    auto report = evaluate_runs(config, results);
    fs::path dir = fs::path(config.out_dir) / report.env_name /
                   std::string(to_string(config.mode));
    write_report(report, dir);
    return report;
}

}  // namespace rewardlab::run
