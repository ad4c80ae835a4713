// rewardlab command-line interface: discovery runs, candidate evaluation,
// selection-accuracy sweeps and report rendering.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rewardlab/env_io.hpp"
#include "rewardlab/orchestrator.hpp"
#include "rewardlab/sweep.hpp"

namespace fs = std::filesystem;
using namespace rewardlab;

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find(',', start);
        if (end == std::string::npos) end = text.size();
        std::string item = text.substr(start, end - start);
        if (!item.empty()) out.push_back(std::stoull(item));
        start = end + 1;
        if (end == text.size()) break;
    }
    return out;
}

// "1..5" or "1,3,5" -> {1,...}
std::vector<int> parse_int_range(const std::string& text) {
    std::vector<int> out;
    std::size_t dots = text.find("..");
    if (dots != std::string::npos) {
        int lo = std::stoi(text.substr(0, dots));
        int hi = std::stoi(text.substr(dots + 2));
        for (int v = lo; v <= hi; ++v) out.push_back(v);
        return out;
    }
    for (std::uint64_t v : parse_seed_list(text)) out.push_back(static_cast<int>(v));
    return out;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

int cmd_discover(const CLI::App& cmd, const run::RunConfig& config) {
    bool evaluate = cmd.get_option("--no-eval")->count() == 0;
    if (!evaluate) {
        auto results = run::multi_run(config);
        int ok = 0;
        for (const auto& r : results) {
            if (r.ok) {
                ++ok;
                std::cout << "run " << r.run_index << ": winner cand" << r.winner.id << " ("
                          << r.winner.source_text << "), " << r.llm_calls << " LLM calls\n";
            } else {
                std::cout << "run " << r.run_index << ": FAILED — " << r.error << "\n";
            }
        }
        std::cout << ok << "/" << results.size() << " runs completed; artifacts under "
                  << config.out_dir << "\n";
        return ok > 0 ? 0 : 1;
    }
    auto report = run::run_protocol(config);
    std::cout << run::report_to_text(report);
    fs::path dir = fs::path(config.out_dir) / report.env_name /
                   std::string(run::to_string(report.mode));
    std::cout << "reports written to " << dir.string() << "\n";
    return 0;
}

int cmd_evaluate(const std::string& candidate_file, const run::RunConfig& config,
                 const std::string& out_path) {
    const envs::EnvSpec env = config.env_file.empty()
                                  ? envs::make_env(config.env_name)
                                  : envs::make_env_from_file(config.env_file, config.env_name);
    std::string source = candidate_file == "-" ? std::string(std::istreambuf_iterator<char>(std::cin),
                                                             std::istreambuf_iterator<char>())
                                               : read_file(candidate_file);
    // trim to a single expression line set
    while (!source.empty() && (source.back() == '\n' || source.back() == '\r')) source.pop_back();
    auto parsed = dsl::parse_expr(source);
    if (!parsed.ok()) {
        std::cerr << "candidate does not parse at position " << parsed.error.position << ": "
                  << parsed.error.message << "\n";
        return 1;
    }
    auto report = dsl::validate(*parsed.expr, env.schema);
    if (!report.valid()) {
        std::cerr << "candidate does not validate: " << report.joined() << "\n";
        return 1;
    }
    dsl::RewardProgram program{parsed.expr, source};
    auto eval = run::evaluate_candidate(env, program, env.schema, config);

    nlohmann::json j = {{"env", env.name},
                        {"candidate", source},
                        {"pp", eval.pp},
                        {"pp_seed", eval.pp_seed},
                        {"gp_scores", eval.gp_scores},
                        {"gp_seeds", eval.gp_seeds},
                        {"gp_mean", eval.gp_mean},
                        {"gp_std", eval.gp_std}};
    std::cout << j.dump(2) << "\n";
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary);
        out << j.dump(2) << "\n";
    }
    return 0;
}

int cmd_sweep(const std::string& sets_dir, int synthesize, int set_size,
              const std::string& analyzers, const std::string& metrics, double sigma,
              std::uint64_t seed, const std::string& out_path) {
    std::vector<sweep::ExperimentSet> sets;
    if (!sets_dir.empty()) {
        sets = sweep::load_sets(sets_dir);
    } else if (synthesize > 0) {
        sets = sweep::make_synthetic_sets(synthesize, set_size, seed);
    } else {
        std::cerr << "need --sets-dir or --synthesize\n";
        return 1;
    }
    auto cells = sweep::accuracy_sweep(sets, parse_int_range(analyzers),
                                       parse_int_range(metrics), sigma, seed);

    nlohmann::json rows = nlohmann::json::array();
    std::cout << "analyzers  metrics  accuracy   (" << sets.size() << " sets, sigma " << sigma
              << ")\n";
    for (const auto& c : cells) {
        std::printf("%9d  %7d  %.4f\n", c.analyzers, c.metrics, c.accuracy);
        rows.push_back(
            {{"analyzers", c.analyzers}, {"metrics", c.metrics}, {"accuracy", c.accuracy}});
    }
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary);
        out << nlohmann::json{{"sets", sets.size()}, {"sigma", sigma}, {"cells", rows}}.dump(2)
            << "\n";
    }
    return 0;
}

int cmd_report(const std::string& runs_dir) {
    auto report = run::report_from_runs_dir(runs_dir);
    run::write_report(report, runs_dir);
    std::cout << run::report_to_text(report);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reward-function discovery over desk-scale control environments"};
    app.require_subcommand(1);

    // ---- discover ----
    auto* discover = app.add_subcommand("discover", "run the discovery/evaluation protocol");
    std::string config_path, env_name, mode_name, backend_kind, transcript, script, out_dir,
        model, base_url, prompts_dir, env_file, test_seeds_text;
    int runs = 0, iterations = 0, candidates = 0, analyzers = 0, metrics = 0, jobs = -1,
        train_generations = -1, test_instances = 0, select_episodes = 0;
    std::uint64_t train_seed = 0;
    bool record = false;
    discover->add_option("--config", config_path, "JSON config file (flags override it)");
    discover->add_option("--env", env_name, "environment name");
    discover->add_option("--mode", mode_name, "autonomous | with_metrics");
    discover->add_option("--runs", runs, "independent discovery runs");
    discover->add_option("--iterations", iterations, "reward optimization iterations");
    discover->add_option("--candidates", candidates, "candidates per iteration");
    discover->add_option("--analyzers", analyzers, "council size");
    discover->add_option("--metrics", metrics, "metrics per analyzer");
    discover->add_option("--backend", backend_kind, "mock | replay | http");
    discover->add_option("--transcript", transcript, "replay transcript file/dir ({run} ok)");
    discover->add_option("--script", script, "mock script JSON array file ({run} ok)");
    discover->add_option("--model", model, "model name sent to the backend");
    discover->add_option("--base-url", base_url, "http backend base URL");
    discover->add_option("--out", out_dir, "output directory");
    discover->add_option("--jobs", jobs, "parallel training jobs (0 = all cores)");
    discover->add_option("--train-generations", train_generations,
                         "override per-env training generations");
    discover->add_option("--train-seed", train_seed, "optimization seed");
    discover->add_option("--test-seeds", test_seeds_text, "comma-separated unseen seeds");
    discover->add_option("--test-instances", test_instances, "parallel test episodes");
    discover->add_option("--select-episodes", select_episodes,
                         "post-training rollout episodes fed to selection");
    discover->add_option("--prompts-dir", prompts_dir, "prompt template overrides");
    discover->add_option("--env-file", env_file, "environment definition file");
    discover->add_flag("--record", record, "record transcripts into the run directories");
    discover->add_flag("--no-eval", "discovery only, skip PP/GP evaluation and reports");

    // ---- evaluate ----
    auto* evaluate = app.add_subcommand("evaluate", "multi-seed PP/GP evaluation of one candidate");
    std::string candidate_file, eval_env = "cartpole", eval_seeds, eval_out, eval_env_file;
    int eval_instances = 128, eval_generations = -1, eval_jobs = 0;
    std::uint64_t eval_train_seed = 42;
    evaluate->add_option("--candidate-file", candidate_file,
                         "file with one reward expression ('-' for stdin)")
        ->required();
    evaluate->add_option("--env", eval_env, "environment name");
    evaluate->add_option("--seeds", eval_seeds, "comma-separated unseen test seeds");
    evaluate->add_option("--train-seed", eval_train_seed, "optimization seed");
    evaluate->add_option("--test-instances", eval_instances, "parallel test episodes");
    evaluate->add_option("--train-generations", eval_generations, "override training generations");
    evaluate->add_option("--jobs", eval_jobs, "parallel jobs");
    evaluate->add_option("--env-file", eval_env_file, "environment definition file");
    evaluate->add_option("--out", eval_out, "also write the evaluation JSON here");

    // ---- sweep ----
    auto* sweep_cmd = app.add_subcommand("sweep", "selection-accuracy sweep over council shapes");
    std::string sets_dir, sweep_analyzers = "1..5", sweep_metrics = "1..3", sweep_out;
    int synthesize = 0, set_size = 8;
    double sigma = 0.5;
    std::uint64_t sweep_seed = 7;
    sweep_cmd->add_option("--sets-dir", sets_dir, "directory of saved experiment sets");
    sweep_cmd->add_option("--synthesize", synthesize, "generate N synthetic sets instead");
    sweep_cmd->add_option("--set-size", set_size, "candidates per synthetic set");
    sweep_cmd->add_option("--analyzers", sweep_analyzers, "analyzer counts, e.g. 1..5 or 1,3,5");
    sweep_cmd->add_option("--metrics", sweep_metrics, "metric counts, e.g. 1..3");
    sweep_cmd->add_option("--sigma", sigma, "noise scale of the synthetic analyzers");
    sweep_cmd->add_option("--seed", sweep_seed, "noise seed");
    sweep_cmd->add_option("--out", sweep_out, "write the accuracy table JSON here");

    // ---- report ----
    auto* report_cmd = app.add_subcommand("report", "re-render reports from a runs directory");
    std::string runs_dir;
    report_cmd->add_option("--runs-dir", runs_dir, "<out>/<env>/<mode> directory")->required();

    // ---- env-dump ----
    auto* env_dump = app.add_subcommand("env-dump", "write the environment definition file");
    std::string env_dump_out = "data/environments.json";
    env_dump->add_option("--out", env_dump_out, "target path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (discover->parsed()) {
            run::RunConfig config;
            if (!config_path.empty()) config = run::load_config(config_path);
            if (discover->count("--env")) config.env_name = env_name;
            if (discover->count("--mode")) config.mode = run::mode_from_string(mode_name);
            if (discover->count("--runs")) config.runs = runs;
            if (discover->count("--iterations")) config.iterations = iterations;
            if (discover->count("--candidates")) config.candidates_per_iteration = candidates;
            if (discover->count("--analyzers")) config.analyzers = analyzers;
            if (discover->count("--metrics")) config.metrics_per_analyzer = metrics;
            if (discover->count("--backend")) config.backend.kind = backend_kind;
            if (discover->count("--transcript")) config.backend.transcript = transcript;
            if (discover->count("--script")) config.backend.script = script;
            if (discover->count("--model")) config.backend.model = model;
            if (discover->count("--base-url")) config.backend.base_url = base_url;
            if (discover->count("--out")) config.out_dir = out_dir;
            if (discover->count("--jobs")) config.jobs = jobs;
            if (discover->count("--train-generations")) config.train_generations = train_generations;
            if (discover->count("--train-seed")) config.train_seed = train_seed;
            if (discover->count("--test-seeds")) config.test_seeds = parse_seed_list(test_seeds_text);
            if (discover->count("--test-instances")) config.test_instances = test_instances;
            if (discover->count("--select-episodes")) config.select_episodes = select_episodes;
            if (discover->count("--prompts-dir")) config.prompts_dir = prompts_dir;
            if (discover->count("--env-file")) config.env_file = env_file;
            if (discover->count("--record")) config.backend.record = record;
            config.validate();
            return cmd_discover(*discover, config);
        }
        if (evaluate->parsed()) {
            run::RunConfig config;
            config.env_name = eval_env;
            config.env_file = eval_env_file;
            config.train_seed = eval_train_seed;
            if (!eval_seeds.empty()) config.test_seeds = parse_seed_list(eval_seeds);
            config.test_instances = eval_instances;
            if (eval_generations > 0) config.train_generations = eval_generations;
            config.jobs = eval_jobs;
            config.validate();
            return cmd_evaluate(candidate_file, config, eval_out);
        }
        if (sweep_cmd->parsed())
            return cmd_sweep(sets_dir, synthesize, set_size, sweep_analyzers, sweep_metrics,
                             sigma, sweep_seed, sweep_out);
        if (report_cmd->parsed()) return cmd_report(runs_dir);
        if (env_dump->parsed()) {
            fs::path out(env_dump_out);
            if (out.has_parent_path()) fs::create_directories(out.parent_path());
            envs::save_env_file(out);
            std::cout << "wrote " << out.string() << "\n";
            return 0;
        }
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
