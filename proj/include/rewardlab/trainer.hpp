#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rewardlab/dsl.hpp"
#include "rewardlab/env.hpp"
#include "rewardlab/rng.hpp"
#include "rewardlab/table.hpp"

namespace rewardlab::dsl {

// A generated reward function: the parsed expression plus the exact text the
// agent emitted.
struct RewardProgram {
    ExprPtr expr;
    std::string source_text;
};

}  // namespace rewardlab::dsl

namespace rewardlab::trainer {

// Linear state-to-action map followed by tanh squashing scaled to the action
// bounds. Parameter layout: per action, state_dim weights then a bias.
struct PolicySpec {
    int state_dim = 0;
    int action_dim = 0;
    std::vector<double> theta;

    static int parameter_count(int state_dim, int action_dim) {
        return (state_dim + 1) * action_dim;
    }
};

struct TrainConfig {
    int generations = 60;
    int population = 64;
    double elite_fraction = 0.125;
    double init_std = 1.0;
    double std_floor = 0.02;
    int episodes_per_eval = 4;
    std::uint64_t seed = 42;

    int elite_count() const {
        return std::max(1, static_cast<int>(static_cast<double>(population) * elite_fraction));
    }

    static int default_generations(const envs::EnvSpec& env) {
        switch (env.id) {
            case envs::EnvId::Cartpole: return 60;
            case envs::EnvId::Hover3d: return 60;
            case envs::EnvId::Runner1d: return 150;
            case envs::EnvId::Drawer1d: return 200;
        }
        return 60;
    }

    static TrainConfig defaults_for(const envs::EnvSpec& env, std::uint64_t seed = 42) {
        TrainConfig c;
        c.generations = default_generations(env);
        c.seed = seed;
        return c;
    }
};

namespace detail {

class PolicyRunner {
public:
    // Inputs are divided by the env's characteristic state scales before the
    // linear map, so unit-Gaussian parameters cover useful gain ranges. The
    // composition is still a linear map of the state.
    PolicyRunner(const PolicySpec& policy, const envs::EnvSpec& env) : policy_(&policy) {
        for (const auto& [lo, hi] : env.action_bounds) {
            centers_.push_back(0.5 * (lo + hi));
            halves_.push_back(0.5 * (hi - lo));
        }
        inv_scales_.assign(static_cast<std::size_t>(policy.state_dim), 1.0);
        for (std::size_t i = 0; i < env.state_scales.size() && i < inv_scales_.size(); ++i)
            if (env.state_scales[i] > 0.0) inv_scales_[i] = 1.0 / env.state_scales[i];
    }

    void act(std::span<const double> state, std::span<double> action) const {
        const int sd = policy_->state_dim;
        const double* theta = policy_->theta.data();
        for (int j = 0; j < policy_->action_dim; ++j) {
            const double* w = theta + static_cast<std::size_t>(j) * (sd + 1);
            double z = w[sd];
            for (int i = 0; i < sd; ++i)
                z += w[i] * state[static_cast<std::size_t>(i)] *
                     inv_scales_[static_cast<std::size_t>(i)];
            action[static_cast<std::size_t>(j)] =
                centers_[static_cast<std::size_t>(j)] +
                halves_[static_cast<std::size_t>(j)] * std::tanh(z);
        }
    }

private:
    const PolicySpec* policy_;
    std::vector<double> centers_;
    std::vector<double> halves_;
    std::vector<double> inv_scales_;
};

// Mean per-step reward of one policy over fixed evaluation episodes.
inline double score_policy(const envs::EnvSpec& env, const envs::Dynamics& dynamics,
                           const PolicySpec& policy, const dsl::CompiledExpr& reward,
                           std::span<const std::uint64_t> episode_seeds) {
    const std::size_t sd = static_cast<std::size_t>(env.state_dim());
    const std::size_t ad = static_cast<std::size_t>(env.action_dim());
    PolicyRunner runner(policy, env);
    std::vector<double> row(2 * sd + ad);
    auto s = std::span<double>(row.data(), sd);
    auto a = std::span<double>(row.data() + sd, ad);
    auto sn = std::span<double>(row.data() + sd + ad, sd);

    double total = 0.0;
    for (std::uint64_t ep_seed : episode_seeds) {
        std::vector<double> init = envs::reset(env, ep_seed);
        std::copy(init.begin(), init.end(), s.begin());
        for (int t = 0; t < env.horizon; ++t) {
            runner.act(s, a);
            dynamics.step(s, a, sn);
            total += reward.eval(row);
            std::copy(sn.begin(), sn.end(), s.begin());
        }
    }
    return total / (static_cast<double>(episode_seeds.size()) * env.horizon);
}

inline PolicySpec train_impl(const envs::EnvSpec& env, const dsl::RewardProgram& reward,
                             const TrainConfig& config, const dsl::Schema* naming,
                             std::vector<double>* elite_curve) {
    const dsl::Schema& schema = naming ? *naming : env.schema;
    const dsl::RowLayout layout = dsl::RowLayout::transition(schema);
    const dsl::CompiledExpr compiled = dsl::CompiledExpr::compile(*reward.expr, layout);
    const envs::Dynamics dynamics(env);

    const int param_count = PolicySpec::parameter_count(env.state_dim(), env.action_dim());
    const int pop = config.population;
    const int n_elite = config.elite_count();

    // Evaluation episodes are fixed for the whole run so scores stay
    // comparable across generations (and retained elites keep their scores).
    std::vector<std::uint64_t> episode_seeds;
    for (int e = 0; e < config.episodes_per_eval; ++e)
        episode_seeds.push_back(
            derive_seed(config.seed, "train-episode", static_cast<std::uint64_t>(e)));

    std::vector<double> mean(static_cast<std::size_t>(param_count), 0.0);
    std::vector<double> stddev(static_cast<std::size_t>(param_count), config.init_std);
    std::vector<std::vector<double>> members(static_cast<std::size_t>(pop));
    std::vector<double> scores(static_cast<std::size_t>(pop));
    std::vector<std::vector<double>> elites;

    for (int g = 0; g < config.generations; ++g) {
        for (int i = 0; i < pop; ++i) {
            auto& theta = members[static_cast<std::size_t>(i)];
            if (g > 0 && i < n_elite) {
                theta = elites[static_cast<std::size_t>(i)];  // elite retention
            } else {
                CounterRng rng(derive_seed(config.seed, "cem-sample",
                                           static_cast<std::uint64_t>(g) * pop + i));
                theta.resize(static_cast<std::size_t>(param_count));
                for (int p = 0; p < param_count; ++p)
                    theta[static_cast<std::size_t>(p)] =
                        mean[static_cast<std::size_t>(p)] +
                        stddev[static_cast<std::size_t>(p)] * rng.normal();
            }
            PolicySpec candidate{env.state_dim(), env.action_dim(), theta};
            scores[static_cast<std::size_t>(i)] =
                score_policy(env, dynamics, candidate, compiled, episode_seeds);
        }

        std::vector<int> order(static_cast<std::size_t>(pop));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int lhs, int rhs) {
            return scores[static_cast<std::size_t>(lhs)] > scores[static_cast<std::size_t>(rhs)];
        });

        elites.clear();
        double elite_score_sum = 0.0;
        for (int r = 0; r < n_elite; ++r) {
            int idx = order[static_cast<std::size_t>(r)];
            elites.push_back(members[static_cast<std::size_t>(idx)]);
            elite_score_sum += scores[static_cast<std::size_t>(idx)];
        }
        if (elite_curve) elite_curve->push_back(elite_score_sum / n_elite);

        for (int p = 0; p < param_count; ++p) {
            double m = 0.0;
            for (const auto& e : elites) m += e[static_cast<std::size_t>(p)];
            m /= static_cast<double>(n_elite);
            double var = 0.0;
            for (const auto& e : elites) {
                double d = e[static_cast<std::size_t>(p)] - m;
                var += d * d;
            }
            var /= static_cast<double>(n_elite);
            mean[static_cast<std::size_t>(p)] = m;
            stddev[static_cast<std::size_t>(p)] = std::max(std::sqrt(var), config.std_floor);
        }
    }

    return PolicySpec{env.state_dim(), env.action_dim(), std::move(mean)};
}

}  // namespace detail

// Cross-entropy-method search over policy parameters: per generation, sample
// a population from a diagonal Gaussian, score each member by mean per-step
// DSL reward over seeded episodes, refit mean/std to the elite set (std
// floored). Returns the final mean vector. Deterministic given the seed.
inline PolicySpec train(const envs::EnvSpec& env, const dsl::RewardProgram& reward,
                        const TrainConfig& config, const dsl::Schema* naming = nullptr) {
    return detail::train_impl(env, reward, config, naming, nullptr);
}

// Same search, also reporting the mean elite score per generation.
inline PolicySpec train_with_curve(const envs::EnvSpec& env, const dsl::RewardProgram& reward,
                                   const TrainConfig& config, std::vector<double>& elite_curve,
                                   const dsl::Schema* naming = nullptr) {
    return detail::train_impl(env, reward, config, naming, &elite_curve);
}

// Full-horizon rollouts; one row per transition, columns s.*, a.*, sn.*,
// episode_id. Episode e uses the derived seed (seed, "episode", e).
inline TrajectoryTable rollout(const envs::EnvSpec& env, const PolicySpec& policy,
                               int n_episodes, std::uint64_t seed,
                               const dsl::Schema* naming = nullptr) {
    const dsl::Schema& schema = naming ? *naming : env.schema;
    std::vector<std::string> columns = dsl::RowLayout::transition(schema).names;
    columns.push_back("episode_id");
    TrajectoryTable table(std::move(columns));
    table.reserve_rows(static_cast<std::size_t>(n_episodes) * env.horizon);

    const std::size_t sd = static_cast<std::size_t>(env.state_dim());
    const std::size_t ad = static_cast<std::size_t>(env.action_dim());
    const envs::Dynamics dynamics(env);
    detail::PolicyRunner runner(policy, env);

    std::vector<double> row(2 * sd + ad + 1);
    auto s = std::span<double>(row.data(), sd);
    auto a = std::span<double>(row.data() + sd, ad);
    auto sn = std::span<double>(row.data() + sd + ad, sd);

    for (int e = 0; e < n_episodes; ++e) {
        std::vector<double> init =
            envs::reset(env, derive_seed(seed, "episode", static_cast<std::uint64_t>(e)));
        std::copy(init.begin(), init.end(), s.begin());
        row.back() = static_cast<double>(e);
        for (int t = 0; t < env.horizon; ++t) {
            runner.act(s, a);
            dynamics.step(s, a, sn);
            table.add_row(row);
            std::copy(sn.begin(), sn.end(), s.begin());
        }
    }
    return table;
}

// Short rollout with uniformly random actions, used to sanity-test generated
// programs against realistic rows.
inline TrajectoryTable sample_rollout(const envs::EnvSpec& env, std::uint64_t seed,
                                      int max_steps = 64, const dsl::Schema* naming = nullptr) {
    const dsl::Schema& schema = naming ? *naming : env.schema;
    std::vector<std::string> columns = dsl::RowLayout::transition(schema).names;
    columns.push_back("episode_id");
    TrajectoryTable table(std::move(columns));

    const std::size_t sd = static_cast<std::size_t>(env.state_dim());
    const std::size_t ad = static_cast<std::size_t>(env.action_dim());
    const envs::Dynamics dynamics(env);
    CounterRng rng(derive_seed(seed, "sample-actions"));

    std::vector<double> row(2 * sd + ad + 1, 0.0);
    auto s = std::span<double>(row.data(), sd);
    auto a = std::span<double>(row.data() + sd, ad);
    auto sn = std::span<double>(row.data() + sd + ad, sd);

    std::vector<double> init = envs::reset(env, derive_seed(seed, "episode", 0));
    std::copy(init.begin(), init.end(), s.begin());
    int steps = std::min(env.horizon, max_steps);
    for (int t = 0; t < steps; ++t) {
        for (std::size_t j = 0; j < ad; ++j)
            a[j] = rng.uniform(env.action_bounds[j].first, env.action_bounds[j].second);
        dynamics.step(s, a, sn);
        table.add_row(row);
        std::copy(sn.begin(), sn.end(), s.begin());
    }
    return table;
}

// k independently initialized test episodes pooled into one table, scored by
// the environment's ground-truth metric.
struct TestResult {
    TrajectoryTable table;
    double ground_truth = 0.0;
};

inline TestResult test_parallel(const envs::EnvSpec& env, const PolicySpec& policy, int k,
                                std::uint64_t seed, const dsl::Schema* naming = nullptr) {
    TestResult result;
    result.table = rollout(env, policy, k, seed, naming);
    result.ground_truth = envs::ground_truth(env, result.table);
    return result;
}

}  // namespace rewardlab::trainer
