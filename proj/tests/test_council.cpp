#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>

#include "rewardlab/council.hpp"
#include "rewardlab/rng.hpp"
#include "rewardlab/trainer.hpp"

using namespace rewardlab;
using namespace rewardlab::council;

namespace {

struct Rig {
    std::unique_ptr<llm::Gateway> gateway;
    std::unique_ptr<CouncilBuilder> builder;
    llm::Transcript transcript;

    explicit Rig(std::vector<std::string> script) {
        gateway = std::make_unique<llm::Gateway>(
            std::make_unique<llm::MockBackend>(std::move(script)));
        gateway->record_to(&transcript);
        builder = std::make_unique<CouncilBuilder>(*gateway, prompts::PromptLibrary::builtin(),
                                                   CouncilConfig{});
    }
};

const char* kInsights = "A good policy keeps the pole angle near zero at all times.";
const char* kProposal =
    "measurement: mean squared pole angle\n"
    "rationale: directly captures how upright the pole stays\n"
    "criteria: lower is better";
const char* kMetricCode =
    "expr: s.pole_angle^2\n"
    "aggregator: mean\n"
    "direction: minimize";

// Cartpole-schema table whose pole_angle column carries the given values.
TrajectoryTable angle_table(const std::vector<double>& angles) {
    TrajectoryTable t({"s.cart_pos", "s.cart_vel", "s.pole_angle", "s.pole_ang_vel",
                       "a.cart_force", "sn.cart_pos", "sn.cart_vel", "sn.pole_angle",
                       "sn.pole_ang_vel", "episode_id"});
    for (double a : angles) t.add_row(std::vector<double>{0, 0, a, 0, 0, 0, 0, a, 0, 0});
    return t;
}

dsl::MetricProgram angle_metric() {
    auto parsed = dsl::parse_expr("s.pole_angle^2");
    return dsl::MetricProgram{parsed.expr, dsl::Aggregator::Mean, dsl::Direction::Minimize,
                              "s.pole_angle^2"};
}

}  // namespace

TEST_CASE("plan_metrics runs the two-turn procedure and keeps turn 1 in context") {
    auto env = envs::make_cartpole();
    Rig rig({kInsights, kProposal});
    auto proposals = rig.builder->plan_metrics(env, 1, "analyzer 1");
    REQUIRE(proposals.size() == 1u);
    CHECK(proposals[0].description == "mean squared pole angle");
    CHECK(proposals[0].rationale == "directly captures how upright the pole stays");
    CHECK(proposals[0].criteria == "lower is better");

    // the second request contains the first turn's reasoning verbatim
    REQUIRE(rig.transcript.size() == 2u);
    bool found = false;
    for (const auto& m : rig.transcript.entries()[1].messages)
        if (m.role == llm::Role::Assistant && m.content == kInsights) found = true;
    CHECK(found);
}

TEST_CASE("plan_metrics cardinality and the EmptyProposal contract") {
    auto env = envs::make_cartpole();
    Rig two({kInsights,
             "measurement: mean squared pole angle\nrationale: r\ncriteria: lower\n"
             "\n"
             "measurement: mean absolute cart velocity\nrationale: r2\ncriteria: lower"});
    auto proposals = two.builder->plan_metrics(env, 2, "analyzer 1");
    CHECK(proposals.size() == 2u);
    CHECK(proposals[1].description == "mean absolute cart velocity");

    Rig empty({kInsights, "no metrics today", "still nothing"});
    CHECK_THROWS_AS(empty.builder->plan_metrics(env, 1, "analyzer 1"), EmptyProposal);
}

TEST_CASE("code_metric translates a proposal into a validated program") {
    auto env = envs::make_cartpole();
    auto sample = trainer::sample_rollout(env, 5);
    Rig rig({kMetricCode});
    MetricProposal proposal{"mean squared pole angle", "", ""};
    auto metric = rig.builder->code_metric(proposal, env.schema, sample, "analyzer 1 metric 1");
    CHECK(metric.source_text == "s.pole_angle^2");
    CHECK(metric.aggregator == dsl::Aggregator::Mean);
    CHECK(metric.direction == dsl::Direction::Minimize);
}

TEST_CASE("code_metric repairs an unknown identifier on attempt 2") {
    auto env = envs::make_cartpole();
    auto sample = trainer::sample_rollout(env, 5);
    Rig rig({"expr: s.tip_height^2\naggregator: mean\ndirection: minimize", kMetricCode});
    auto metric = rig.builder->code_metric({"mean squared pole angle", "", ""}, env.schema,
                                           sample, "ctx");
    CHECK(metric.source_text == "s.pole_angle^2");
    CHECK(rig.gateway->calls() == 2);
}

TEST_CASE("code_metric re-prompts once for a missing direction") {
    auto env = envs::make_cartpole();
    auto sample = trainer::sample_rollout(env, 5);
    Rig ok({"expr: s.pole_angle^2\naggregator: mean", "direction: minimize"});
    auto metric = ok.builder->code_metric({"m", "", ""}, env.schema, sample, "ctx");
    CHECK(metric.direction == dsl::Direction::Minimize);

    Rig fail({"expr: s.pole_angle^2\naggregator: mean", "sorry"});
    CHECK_THROWS_AS(fail.builder->code_metric({"m", "", ""}, env.schema, sample, "ctx"),
                    CodingFailed);
}

TEST_CASE("code_metric exhausts its repair budget then raises CodingFailed") {
    auto env = envs::make_cartpole();
    auto sample = trainer::sample_rollout(env, 5);
    Rig rig({"garbage", "more garbage", "still garbage"});
    CHECK_THROWS_AS(rig.builder->code_metric({"m", "", ""}, env.schema, sample, "ctx"),
                    CodingFailed);
    CHECK(rig.gateway->calls() == 3);
}

TEST_CASE("build_council creates m analyzers from independent conversations") {
    auto env = envs::make_cartpole();
    auto sample = trainer::sample_rollout(env, 5);
    std::vector<std::string> script;
    for (int j = 0; j < 3; ++j) {
        script.push_back(kInsights);
        script.push_back(kProposal);
        script.push_back(kMetricCode);
    }
    Rig rig(std::move(script));
    auto council = rig.builder->build(env, env.schema, 3, 1, sample);
    REQUIRE(council.size() == 3);
    for (int j = 0; j < 3; ++j) {
        CHECK(council.analyzers[static_cast<std::size_t>(j)].index == j + 1);
        CHECK(council.analyzers[static_cast<std::size_t>(j)].metric.source_text ==
              "s.pole_angle^2");
    }
    // each analyzer's first planner request starts a fresh conversation
    CHECK(rig.transcript.entries()[0].messages.size() == 2u);
    CHECK(rig.transcript.entries()[3].messages.size() == 2u);
    CHECK(rig.transcript.entries()[6].messages.size() == 2u);
}

TEST_CASE("build_council degenerates cleanly to a single analyzer") {
    auto env = envs::make_cartpole();
    auto sample = trainer::sample_rollout(env, 5);
    Rig rig({kInsights, kProposal, kMetricCode});
    auto council = rig.builder->build(env, env.schema, 1, 1, sample);
    CHECK(council.size() == 1);
}

TEST_CASE("an analyzer failing twice aborts the council build with its name") {
    auto env = envs::make_cartpole();
    auto sample = trainer::sample_rollout(env, 5);
    std::vector<std::string> script;
    script.push_back(kInsights);
    script.push_back(kProposal);
    script.push_back(kMetricCode);  // analyzer 1 fine
    // analyzer 2: two full attempts, both with unparseable proposals
    script.push_back(kInsights);
    script.push_back("nothing");
    script.push_back("nothing again");
    script.push_back(kInsights);
    script.push_back("nope");
    script.push_back("still nope");
    Rig rig(std::move(script));
    try {
        rig.builder->build(env, env.schema, 3, 1, sample);
        FAIL("expected CouncilBuildFailed");
    } catch (const CouncilBuildFailed& e) {
        CHECK(std::string(e.what()).find("analyzer 2") != std::string::npos);
    }
}

TEST_CASE("select fixtures: majority, declared tie-break, single candidate") {
    std::vector<int> ids{10, 20, 30};

    // votes [A, A, B] -> A without tie-break
    std::vector<AnalyzerScores> majority{
        {{1.0, 2.0, 3.0}, dsl::Direction::Minimize},   // votes 10
        {{1.0, 2.0, 3.0}, dsl::Direction::Minimize},   // votes 10
        {{5.0, 1.0, 3.0}, dsl::Direction::Minimize}};  // votes 20
    auto r = select_from_scores(majority, ids);
    CHECK(r.winner_id == 10);
    CHECK_FALSE(r.tie_broken);
    CHECK(r.tally.at(10) == 2);
    CHECK(r.tally.at(20) == 1);

    // votes [A, B, C]: analyzer #1 ranks B(20) first among the tied leaders?
    // analyzer #1 votes 20, analyzer #2 votes 10, analyzer #3 votes 30.
    std::vector<AnalyzerScores> split{
        {{2.0, 1.0, 3.0}, dsl::Direction::Minimize},   // ranking: 20, 10, 30
        {{1.0, 2.0, 3.0}, dsl::Direction::Minimize},   // ranking: 10, 20, 30
        {{2.0, 3.0, 1.0}, dsl::Direction::Minimize}};  // ranking: 30, 10, 20
    r = select_from_scores(split, ids);
    CHECK(r.winner_id == 20);  // analyzer #1's ranking breaks the tie
    CHECK(r.tie_broken);

    // single candidate
    r = select_from_scores({{{0.5}, dsl::Direction::Maximize}}, {77});
    CHECK(r.winner_id == 77);

    CHECK_THROWS_AS(select_from_scores(majority, {}), NoCandidates);
}

TEST_CASE("voting properties over randomized score matrices") {
    CounterRng rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        int n = 2 + static_cast<int>(rng.next_u64() % 6);
        int m = 1 + static_cast<int>(rng.next_u64() % 5);
        std::vector<int> ids;
        for (int i = 0; i < n; ++i) ids.push_back(i * 3 + 1);
        std::vector<AnalyzerScores> scores;
        for (int j = 0; j < m; ++j) {
            AnalyzerScores s;
            s.direction = (rng.next_u64() & 1) ? dsl::Direction::Minimize
                                               : dsl::Direction::Maximize;
            for (int i = 0; i < n; ++i) s.values.push_back(rng.uniform(-5, 5));
            scores.push_back(std::move(s));
        }
        auto result = select_from_scores(scores, ids);

        // vote conservation
        int total = 0;
        for (const auto& [id, votes] : result.tally) total += votes;
        REQUIRE(total == m);

        // winner received at least as many votes as anyone else
        for (const auto& [id, votes] : result.tally)
            REQUIRE(result.tally.at(result.winner_id) >= votes);

        // scale invariance: positive scaling of one analyzer's values
        auto scaled = scores;
        std::size_t which = rng.next_u64() % scaled.size();
        double factor = rng.uniform(0.1, 10.0);
        for (double& v : scaled[which].values) v *= factor;
        auto result2 = select_from_scores(scaled, ids);
        REQUIRE(result2.winner_id == result.winner_id);
        REQUIRE(result2.rankings == result.rankings);
    }
}

TEST_CASE("select over tables agrees with analyzer metric evaluation") {
    Council council;
    for (int j = 1; j <= 3; ++j)
        council.analyzers.push_back({j, {"mean squared pole angle", "", ""}, angle_metric(), {}});

    auto t1 = angle_table({0.3, 0.3});   // msa 0.09
    auto t2 = angle_table({0.05, 0.05}); // msa 0.0025  <- best
    auto t3 = angle_table({0.6, 0.0});   // msa 0.18
    CandidateTables tables{{1, &t1}, {2, &t2}, {3, &t3}};

    auto result = select(council, tables);
    CHECK(result.winner_id == 2);
    CHECK(result.tally.at(2) == 3);
    CHECK_FALSE(result.tie_broken);
    CHECK(result.rankings[0] == std::vector<int>{2, 1, 3});

    CHECK_THROWS_AS(select(council, CandidateTables{}), NoCandidates);
}

TEST_CASE("select_with_ground_truth picks by direction with lowest-id ties") {
    auto env = envs::make_cartpole();
    auto t1 = angle_table({std::sqrt(0.02)});
    auto t2 = angle_table({std::sqrt(0.005)});
    auto t3 = angle_table({std::sqrt(0.3)});
    CandidateTables tables{{1, &t1}, {2, &t2}, {3, &t3}};
    CHECK(select_with_ground_truth(env, tables) == 2);

    auto e1 = angle_table({0.1});
    auto e2 = angle_table({0.1});
    CandidateTables equal{{4, &e1}, {2, &e2}};
    CHECK(select_with_ground_truth(env, equal) == 2);

    // runner maximizes mean forward velocity
    auto runner = envs::make_runner1d();
    TrajectoryTable slow({"s.x", "s.vx", "s.energy_used"});
    slow.add_row(std::vector<double>{0, 1.0, 0});
    TrajectoryTable fast({"s.x", "s.vx", "s.energy_used"});
    fast.add_row(std::vector<double>{0, 9.0, 0});
    CandidateTables rt{{1, &slow}, {2, &fast}};
    CHECK(select_with_ground_truth(runner, rt) == 2);
}

TEST_CASE("aligned council agrees with ground-truth selection") {
    auto env = envs::make_cartpole();
    Council aligned;
    for (int j = 1; j <= 3; ++j)
        aligned.analyzers.push_back({j, {"mean squared pole angle", "", ""}, angle_metric(), {}});

    CounterRng rng(99);
    for (int trial = 0; trial < 250; ++trial) {
        int n = 2 + static_cast<int>(rng.next_u64() % 7);
        std::vector<TrajectoryTable> tables;
        for (int i = 0; i < n; ++i) {
            std::vector<double> angles;
            int rows = 2 + static_cast<int>(rng.next_u64() % 5);
            for (int k = 0; k < rows; ++k) angles.push_back(rng.uniform(-0.5, 0.5));
            tables.push_back(angle_table(angles));
        }
        CandidateTables by_id;
        for (int i = 0; i < n; ++i) by_id.emplace(i, &tables[static_cast<std::size_t>(i)]);
        REQUIRE(select(aligned, by_id).winner_id == select_with_ground_truth(env, by_id));
    }
}

TEST_CASE("describe_scores formats one line per analyzer") {
    Council council;
    for (int j = 1; j <= 2; ++j)
        council.analyzers.push_back({j, {"mean squared pole angle", "", ""}, angle_metric(), {}});
    auto table = angle_table({0.1, 0.1});
    std::string text = describe_scores(council, table);
    CHECK(text.find("analyzer 1 [mean squared pole angle, minimize]:") != std::string::npos);
    CHECK(text.find("analyzer 2") != std::string::npos);
}

TEST_CASE("permutation equivariance: relabeled ids relabel the winner") {
    CounterRng rng(7890);
    for (int trial = 0; trial < 200; ++trial) {
        int n = 2 + static_cast<int>(rng.next_u64() % 6);
        int m = 1 + static_cast<int>(rng.next_u64() % 4);
        std::vector<int> ids;
        for (int i = 0; i < n; ++i) ids.push_back(i);
        std::vector<AnalyzerScores> scores;
        for (int j = 0; j < m; ++j) {
            AnalyzerScores s;
            s.direction = (rng.next_u64() & 1) ? dsl::Direction::Minimize
                                               : dsl::Direction::Maximize;
            for (int i = 0; i < n; ++i)
                s.values.push_back(static_cast<double>(rng.next_u64() % 3));
            scores.push_back(std::move(s));
        }
        auto base = select_from_scores(scores, ids);

        // order-preserving relabeling id -> 10*id + 5
        std::vector<int> relabeled;
        for (int id : ids) relabeled.push_back(10 * id + 5);
        auto mapped = select_from_scores(scores, relabeled);
        REQUIRE(mapped.winner_id == 10 * base.winner_id + 5);
        REQUIRE(mapped.tie_broken == base.tie_broken);
    }
}
