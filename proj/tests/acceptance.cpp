// Acceptance suite: one test case per acceptance criterion, one [PASS]/[FAIL]
// line per criterion on stdout. Run via `ctest -R acceptance` or directly.

#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "rewardlab/orchestrator.hpp"
#include "rewardlab/sweep.hpp"
#include "support.hpp"

using namespace rewardlab;
using Catch::Matchers::WithinAbs;
namespace fs = std::filesystem;

namespace {

class CriterionReporter : public Catch::EventListenerBase {
public:
    using EventListenerBase::EventListenerBase;
    void testCaseEnded(const Catch::TestCaseStats& stats) override {
        std::printf("[%s] %s\n", stats.totals.assertions.allOk() ? "PASS" : "FAIL",
                    stats.testInfo->name.c_str());
        std::fflush(stdout);
    }
};

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

bool dirs_identical(const fs::path& a, const fs::path& b) {
    auto listing = [](const fs::path& root) {
        std::vector<fs::path> rel;
        for (const auto& entry : fs::recursive_directory_iterator(root))
            if (entry.is_regular_file()) rel.push_back(fs::relative(entry.path(), root));
        std::sort(rel.begin(), rel.end());
        return rel;
    };
    auto la = listing(a), lb = listing(b);
    if (la != lb) return false;
    for (const auto& rel : la) {
        std::ifstream fa(a / rel, std::ios::binary), fb(b / rel, std::ios::binary);
        std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
        std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
        if (ca != cb) return false;
    }
    return true;
}

std::string fenced(const std::string& expr) { return "```\n" + expr + "\n```"; }

// Golden mock script for a full cartpole run at default shape (5 iterations,
// 8 candidates, 3 analyzers): one known-good reward planted among 7
// distractors in iteration 1 (one of which never passes sanity), small
// perturbations of the planted reward afterwards.
std::vector<std::string> golden_cartpole_script() {
    const std::string good = "1 - s.pole_angle^2 - 0.01*abs(a.cart_force)";
    std::vector<std::string> script;
    script.push_back("states: cart_pos, cart_vel, pole_angle, pole_ang_vel\nactions: cart_force");

    // iteration 1: candidates in call order; candidate 5 burns its repair budget
    script.push_back(fenced("s.pole_angle"));
    script.push_back(fenced("s.cart_pos^2"));
    script.push_back(fenced("-(s.pole_ang_vel^2)"));
    script.push_back(fenced(good));
    script.push_back(fenced("0.0"));
    script.push_back(fenced("1.0"));  // repair attempt, still constant
    script.push_back(fenced("2.0"));  // repair attempt, still constant
    script.push_back(fenced("exp(-abs(s.pole_ang_vel))"));
    script.push_back(fenced("tanh(s.cart_vel)"));
    script.push_back(fenced("-(s.cart_pos^2)"));

    // council: three planner/coder trios
    const char* coders[] = {
        "expr: s.pole_angle^2\naggregator: mean\ndirection: minimize",
        "expr: abs(s.pole_angle)\naggregator: mean\ndirection: minimize",
        "expr: s.pole_angle^2 + 0.001*s.cart_vel^2\naggregator: mean\ndirection: minimize"};
    const char* measurements[] = {"mean squared pole angle", "mean absolute pole angle",
                                  "angle error with a small velocity term"};
    for (int j = 0; j < 3; ++j) {
        script.push_back("The policy should keep the pole close to vertical at every step.");
        script.push_back("measurement: " + std::string(measurements[j]) +
                         "\nrationale: captures uprightness\ncriteria: lower is better");
        script.push_back(coders[j]);
    }

    // iterations 2..5: eight small perturbations each, the original included
    for (int iter = 2; iter <= 5; ++iter) {
        std::string d = std::to_string(iter);
        script.push_back(fenced(good));
        script.push_back(fenced("1 - 1.1*s.pole_angle^2 - 0.01*abs(a.cart_force)"));
        script.push_back(fenced("1 - 0.9*s.pole_angle^2 - 0.012*abs(a.cart_force)"));
        script.push_back(
            fenced("1 - s.pole_angle^2 - 0.008*abs(a.cart_force) - 0.01*s.pole_ang_vel^2"));
        script.push_back(
            fenced("1 - 1.05*s.pole_angle^2 - 0.01*abs(a.cart_force) - 0.005*s.cart_vel^2"));
        script.push_back(fenced("1 - s.pole_angle^2 - 0.02*abs(a.cart_force)"));
        script.push_back(
            fenced("1 - s.pole_angle^2 - 0.01*abs(a.cart_force) - 0.00" + d + "*s.cart_pos^2"));
        script.push_back(fenced("1 - 0.9" + d + "*s.pole_angle^2 - 0.015*abs(a.cart_force)"));
    }
    return script;
}

std::string write_script(const fs::path& dir, const std::vector<std::string>& script) {
    nlohmann::json j = script;
    std::ofstream out(dir / "script.json", std::ios::binary);
    out << j.dump();
    return (dir / "script.json").string();
}

run::RunConfig default_cartpole_config(const fs::path& out, const std::string& script) {
    run::RunConfig config;  // spec defaults: 5 iterations, 8 candidates, 3 analyzers
    config.runs = 1;
    config.jobs = 2;
    config.out_dir = out.string();
    config.backend.kind = "mock";
    config.backend.script = script;
    return config;
}

// Independent re-implementation of the plurality vote for criterion 4.
int oracle_vote(const std::vector<council::AnalyzerScores>& scores,
                const std::vector<int>& ids) {
    auto best_of = [&](const council::AnalyzerScores& s) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < ids.size(); ++i) {
            bool better = s.direction == dsl::Direction::Minimize ? s.values[i] < s.values[best]
                                                                  : s.values[i] > s.values[best];
            bool tie_lower = s.values[i] == s.values[best] && ids[i] < ids[best];
            if (better || tie_lower) best = i;
        }
        return ids[best];
    };
    std::map<int, int> tally;
    for (const auto& s : scores) tally[best_of(s)]++;
    int top = 0;
    for (auto& [id, v] : tally) top = std::max(top, v);
    std::vector<int> leaders;
    for (auto& [id, v] : tally)
        if (v == top) leaders.push_back(id);
    if (leaders.size() == 1) return leaders.front();
    // analyzer #1's full ranking, recomputed naively
    std::vector<int> remaining = ids;
    std::vector<double> vals = scores.front().values;
    while (true) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < remaining.size(); ++i) {
            bool better = scores.front().direction == dsl::Direction::Minimize
                              ? vals[i] < vals[best]
                              : vals[i] > vals[best];
            bool tie_lower = vals[i] == vals[best] && remaining[i] < remaining[best];
            if (better || tie_lower) best = i;
        }
        int id = remaining[best];
        if (std::find(leaders.begin(), leaders.end(), id) != leaders.end()) return id;
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
        vals.erase(vals.begin() + static_cast<std::ptrdiff_t>(best));
    }
}

}  // namespace

CATCH_REGISTER_LISTENER(CriterionReporter)

TEST_CASE("criterion 1: DSL oracle equivalence over 10000 random programs") {
    auto start = std::chrono::steady_clock::now();
    CounterRng rng(20250810);
    auto schema = testsupport::test_schema();
    int checked = 0;
    for (int i = 0; i < 10000; ++i) {
        auto expr = testsupport::random_expr(rng, schema, 6);
        REQUIRE(dsl::validate(*expr, schema).valid());
        auto row = testsupport::random_row(rng, schema);
        double got = dsl::eval_step(*expr, row);
        double want = testsupport::ref_eval(*expr, row);
        REQUIRE(std::isfinite(got));
        REQUIRE_THAT(got, Catch::Matchers::WithinAbs(want, 1e-12) ||
                              Catch::Matchers::WithinRel(want, 1e-12));
        ++checked;
    }
    CHECK(checked == 10000);
    CHECK(seconds_since(start) < 30.0);
}

TEST_CASE("criterion 2: ground-truth metric fidelity on hand-computed fixtures") {
    auto cartpole = envs::make_cartpole();
    TrajectoryTable zero({"s.cart_pos", "s.cart_vel", "s.pole_angle", "s.pole_ang_vel"});
    for (int i = 0; i < 3; ++i) zero.add_row(std::vector<double>{1.0 * i, 0.5, 0.0, 2.0});
    CHECK(envs::ground_truth(cartpole, zero) == 0.0);

    auto drawer = envs::make_drawer1d();
    TrajectoryTable positions({"s.gripper_pos", "s.gripper_vel", "s.drawer_pos"});
    for (double p : {0.2, 0.35, 0.4}) positions.add_row(std::vector<double>{0, 0, p});
    CHECK(envs::ground_truth(drawer, positions) == 2.0 / 3.0);

    auto hover = envs::make_hover3d();
    TrajectoryTable origin({"s.x", "s.y", "s.z", "s.vx", "s.vy", "s.vz"});
    for (int i = 0; i < 2; ++i) origin.add_row(std::vector<double>{0, 0, 0, 1, 2, 3});
    CHECK(envs::ground_truth(hover, origin) == 0.0);
}

TEST_CASE("criterion 3: full-replay determinism on cartpole defaults") {
    TempDir tmp("rl_acc_replay");
    auto script = write_script(tmp.path, golden_cartpole_script());

    // golden transcript recorded once through the scripted mock
    auto record_config = default_cartpole_config(tmp.path / "recorded", script);
    record_config.backend.record = true;
    auto recorded = run::discover(record_config, 0);
    REQUIRE(recorded.ok);
    fs::path transcript = fs::path(recorded.run_dir) / "transcript.jsonl";

    auto start = std::chrono::steady_clock::now();
    auto replay_config = default_cartpole_config(tmp.path / "replay_out", "");
    replay_config.backend.kind = "replay";
    replay_config.backend.script.clear();
    replay_config.backend.transcript = transcript.string();

    auto first = run::discover(replay_config, 0);
    REQUIRE(first.ok);
    fs::copy(tmp.path / "replay_out", tmp.path / "first_pass", fs::copy_options::recursive);
    fs::remove_all(tmp.path / "replay_out");

    auto second = run::discover(replay_config, 0);
    REQUIRE(second.ok);

    CHECK(dirs_identical(tmp.path / "first_pass", tmp.path / "replay_out"));
    CHECK(first.winner.source_text == second.winner.source_text);
    CHECK(seconds_since(start) < 300.0);
}

TEST_CASE("criterion 4: voting properties over 1000 randomized score matrices") {
    CounterRng rng(404);
    for (int trial = 0; trial < 1000; ++trial) {
        int n = 2 + static_cast<int>(rng.next_u64() % 7);
        int m = 1 + static_cast<int>(rng.next_u64() % 5);
        std::vector<int> ids;
        for (int i = 0; i < n; ++i) ids.push_back(i * 2 + 3);
        std::vector<council::AnalyzerScores> scores;
        for (int j = 0; j < m; ++j) {
            council::AnalyzerScores s;
            s.direction =
                (rng.next_u64() & 1) ? dsl::Direction::Minimize : dsl::Direction::Maximize;
            // coarse values so vote ties actually occur
            for (int i = 0; i < n; ++i)
                s.values.push_back(static_cast<double>(rng.next_u64() % 4));
            scores.push_back(std::move(s));
        }
        auto result = council::select_from_scores(scores, ids);

        // vote conservation
        int total = 0;
        for (const auto& [id, votes] : result.tally) total += votes;
        REQUIRE(total == m);

        // majority rule + declared tie-break chain (independent oracle)
        REQUIRE(result.winner_id == oracle_vote(scores, ids));

        // positive-scaling argbest invariance
        auto scaled = scores;
        std::size_t which = rng.next_u64() % scaled.size();
        double factor = rng.uniform(0.05, 20.0);
        for (double& v : scaled[which].values) v *= factor;
        auto rescaled = council::select_from_scores(scaled, ids);
        REQUIRE(rescaled.winner_id == result.winner_id);
        REQUIRE(rescaled.rankings == result.rankings);
    }
    SUCCEED();
}

TEST_CASE("criterion 5: aligned council matches ground-truth selection on 250 sets") {
    auto env = envs::make_cartpole();
    auto parsed = dsl::parse_expr("s.pole_angle^2");
    dsl::MetricProgram gt_metric{parsed.expr, dsl::Aggregator::Mean, dsl::Direction::Minimize,
                                 "s.pole_angle^2"};
    council::Council aligned;
    for (int j = 1; j <= 3; ++j)
        aligned.analyzers.push_back({j, {"mean squared pole angle", "", ""}, gt_metric, {}});

    CounterRng rng(505);
    int agreements = 0;
    const int trials = 250;
    for (int trial = 0; trial < trials; ++trial) {
        int n = 2 + static_cast<int>(rng.next_u64() % 7);
        std::vector<TrajectoryTable> tables;
        for (int i = 0; i < n; ++i) {
            TrajectoryTable t({"s.cart_pos", "s.cart_vel", "s.pole_angle", "s.pole_ang_vel"});
            int rows = 2 + static_cast<int>(rng.next_u64() % 6);
            for (int r = 0; r < rows; ++r)
                t.add_row(std::vector<double>{0, 0, rng.uniform(-0.6, 0.6), 0});
            tables.push_back(std::move(t));
        }
        council::CandidateTables by_id;
        for (int i = 0; i < n; ++i) by_id.emplace(i, &tables[static_cast<std::size_t>(i)]);
        if (council::select(aligned, by_id).winner_id ==
            council::select_with_ground_truth(env, by_id))
            ++agreements;
    }
    CHECK(agreements == trials);  // 100% agreement
}

TEST_CASE("criterion 6: ensemble trend with 95% confidence and m=1..5 sweep table") {
    const double sigma = 0.3;
    const std::uint64_t noise_seed = 9;
    auto sets = sweep::make_synthetic_sets(600, 8, 2025);

    int b = 0, c = 0, correct1 = 0, correct3 = 0;
    for (std::size_t s = 0; s < sets.size(); ++s) {
        int gt = sweep::ground_truth_winner(sets[s]);
        std::vector<council::AnalyzerScores> one{
            sweep::noisy_view(sets[s], 1, sigma, noise_seed, s)};
        std::vector<council::AnalyzerScores> three;
        for (int j = 1; j <= 3; ++j)
            three.push_back(sweep::noisy_view(sets[s], j, sigma, noise_seed, s));
        bool ok1 = council::select_from_scores(one, sets[s].candidate_ids).winner_id == gt;
        bool ok3 = council::select_from_scores(three, sets[s].candidate_ids).winner_id == gt;
        correct1 += ok1;
        correct3 += ok3;
        if (ok3 && !ok1) ++b;
        if (ok1 && !ok3) ++c;
    }
    double acc1 = correct1 / 600.0, acc3 = correct3 / 600.0;
    CHECK(acc3 >= acc1);

    // paired one-sided sign test on the discordant sets: P(B >= b | b+c, 1/2)
    int discordant = b + c;
    double p_value = 0.0;
    for (int k = b; k <= discordant; ++k) {
        double log_comb = std::lgamma(discordant + 1) - std::lgamma(k + 1) -
                          std::lgamma(discordant - k + 1);
        p_value += std::exp(log_comb - discordant * std::log(2.0));
    }
    INFO("acc1=" << acc1 << " acc3=" << acc3 << " b=" << b << " c=" << c << " p=" << p_value);
    CHECK(p_value < 0.05);

    // emit the sweep table for m in 1..5
    auto cells = sweep::accuracy_sweep(sets, {1, 2, 3, 4, 5}, {1}, sigma, noise_seed);
    std::ofstream table("acceptance_sweep_table.txt", std::ios::binary);
    std::printf("    analyzers  metrics  accuracy (600 sets, sigma %.2f)\n", sigma);
    for (const auto& cell : cells) {
        std::printf("    %9d  %7d  %.4f\n", cell.analyzers, cell.metrics, cell.accuracy);
        table << cell.analyzers << "\t" << cell.metrics << "\t" << cell.accuracy << "\n";
    }
    REQUIRE(cells.size() == 6u);  // m=1..5 plus the metrics variant row
}

TEST_CASE("criterion 7: end-to-end desk demo beats the 1.10 baseline-GP bound") {
    auto start = std::chrono::steady_clock::now();
    TempDir tmp("rl_acc_e2e");
    auto script = write_script(tmp.path, golden_cartpole_script());
    auto config = default_cartpole_config(tmp.path / "out", script);

    auto result = run::discover(config, 0);
    REQUIRE(result.ok);
    REQUIRE(result.iterations.size() == 5u);
    CHECK(result.winner.iteration == 5);
    CHECK(result.llm_calls == 52);
    CHECK(result.llm_calls <= run::llm_call_upper_bound(config));

    // iteration 1: the planted reward wins over the distractors
    const auto& iter1 = result.iterations[0];
    bool planted_won = false;
    for (const auto& cand : iter1.candidates)
        if (cand.id == iter1.winner_id)
            planted_won = cand.source_text == "1 - s.pole_angle^2 - 0.01*abs(a.cart_force)";
    CHECK(planted_won);

    auto env = envs::make_cartpole();
    auto winner_eval =
        run::evaluate_candidate(env, *result.winner.program, result.map.schema, config);

    auto baseline_parsed = dsl::parse_expr(env.baseline_reward_text);
    dsl::RewardProgram baseline{baseline_parsed.expr, env.baseline_reward_text};
    auto baseline_eval = run::evaluate_candidate(env, baseline, env.schema, config);

    INFO("winner GP " << winner_eval.gp_mean << " baseline GP " << baseline_eval.gp_mean);
    CHECK(winner_eval.gp_mean <= baseline_eval.gp_mean * 1.10);
    CHECK(winner_eval.gp_scores.size() == 4u);
    CHECK(winner_eval.gp_seeds == std::vector<std::uint64_t>{3120, 2190, 6838, 4024});
    CHECK(seconds_since(start) < 900.0);
}

TEST_CASE("criterion 8: trainer regression on the cartpole baseline at seed 42") {
    auto env = envs::make_cartpole();
    auto parsed = dsl::parse_expr(env.baseline_reward_text);
    dsl::RewardProgram reward{parsed.expr, env.baseline_reward_text};
    auto tc = trainer::TrainConfig::defaults_for(env, 42);

    auto policy = trainer::train(env, reward, tc);
    auto result = trainer::test_parallel(env, policy, 128, 42);
    INFO("seed-42 test MSE_angle = " << result.ground_truth);
    CHECK(result.ground_truth < 0.01);

    auto policy2 = trainer::train(env, reward, tc);
    CHECK(policy.theta == policy2.theta);
}

TEST_CASE("criterion 9: PP/GP bookkeeping and normalization fixtures") {
    auto env = envs::make_cartpole();
    auto parsed = dsl::parse_expr("1 - s.pole_angle^2 - 0.01*abs(a.cart_force)");
    dsl::RewardProgram program{parsed.expr, "fixture"};

    run::RunConfig config;
    config.train_generations = 3;  // bookkeeping needs seeds, not convergence
    config.test_instances = 8;
    config.jobs = 2;

    auto eval = run::evaluate_candidate(env, program, env.schema, config);
    CHECK(eval.pp_seed == 42u);
    CHECK(eval.gp_seeds == std::vector<std::uint64_t>{3120, 2190, 6838, 4024});
    REQUIRE(eval.gp_scores.size() == 4u);

    double mean = 0.0;
    for (double v : eval.gp_scores) mean += v;
    mean /= 4.0;
    double var = 0.0;
    for (double v : eval.gp_scores) var += (v - mean) * (v - mean);
    CHECK_THAT(eval.gp_mean, WithinAbs(mean, 1e-15));
    CHECK_THAT(eval.gp_std, WithinAbs(std::sqrt(var / 4.0), 1e-15));

    CHECK(run::normalize(0.0123, 0.0123, dsl::Direction::Minimize) == 0.0);
    CHECK_THAT(run::normalize(3.40e-3, 4.80e-3, dsl::Direction::Minimize),
               WithinAbs(0.2917, 5e-5));
    CHECK_THAT(run::normalize(8.07, 7.04, dsl::Direction::Maximize), WithinAbs(0.1463, 5e-5));
}
