#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rewardlab/council.hpp"
#include "rewardlab/env.hpp"
#include "rewardlab/metric.hpp"
#include "rewardlab/rng.hpp"
#include "rewardlab/table.hpp"

namespace rewardlab::sweep {

// One saved experiment: the ground-truth metric values of a batch of trained
// candidates, as produced by one discovery iteration.
struct ExperimentSet {
    std::vector<int> candidate_ids;
    std::vector<double> gt_values;  // aligned with candidate_ids
    dsl::Direction direction = dsl::Direction::Maximize;
};

inline int ground_truth_winner(const ExperimentSet& set) {
    if (set.candidate_ids.empty())
        throw std::invalid_argument("experiment set has no candidates");
    std::size_t best = 0;
    for (std::size_t i = 1; i < set.gt_values.size(); ++i) {
        bool better = set.direction == dsl::Direction::Minimize
                          ? set.gt_values[i] < set.gt_values[best]
                          : set.gt_values[i] > set.gt_values[best];
        if (better) best = i;
        // equal values keep the earlier (lower) id
    }
    return set.candidate_ids[best];
}

// Synthetic analyzer: the ground-truth values corrupted by Gaussian noise
// scaled to the set's value spread. The noise depends only on
// (seed, set, analyzer), so analyzer j sees identical values whatever
// council size is being evaluated — accuracy differences between cells come
// from the ensemble, not from resampled noise.
inline council::AnalyzerScores noisy_view(const ExperimentSet& set, int analyzer_index,
                                          double sigma, std::uint64_t seed,
                                          std::uint64_t set_index) {
    double lo = *std::min_element(set.gt_values.begin(), set.gt_values.end());
    double hi = *std::max_element(set.gt_values.begin(), set.gt_values.end());
    double spread = hi - lo;
    if (spread <= 0.0) spread = 1.0;

    CounterRng rng(derive_seed(seed, "analyzer-noise",
                               set_index * 1024 + static_cast<std::uint64_t>(analyzer_index)));
    council::AnalyzerScores scores;
    scores.direction = set.direction;
    for (double v : set.gt_values) scores.values.push_back(v + sigma * spread * rng.normal());
    return scores;
}

struct AccuracyCell {
    int analyzers = 1;
    int metrics = 1;
    double accuracy = 0.0;
};

// Fraction of sets where the noisy council's majority vote agrees with the
// ground-truth winner, for one (m, n_metrics) configuration. Analyzers vote
// by their first metric, so extra metrics are carried but do not change the
// vote; the metrics axis is emitted for completeness.
inline double selection_accuracy(const std::vector<ExperimentSet>& sets, int m, int n_metrics,
                                 double sigma, std::uint64_t seed) {
    (void)n_metrics;
    if (sets.empty()) throw std::invalid_argument("no experiment sets");
    int agreed = 0;
    for (std::size_t s = 0; s < sets.size(); ++s) {
        std::vector<council::AnalyzerScores> scores;
        for (int j = 1; j <= m; ++j) scores.push_back(noisy_view(sets[s], j, sigma, seed, s));
        auto result = council::select_from_scores(scores, sets[s].candidate_ids);
        if (result.winner_id == ground_truth_winner(sets[s])) ++agreed;
    }
    return static_cast<double>(agreed) / static_cast<double>(sets.size());
}

// The two sweep variants: metrics fixed at 1 while the analyzer count
// varies, and analyzers fixed at 3 while the metric count varies.
inline std::vector<AccuracyCell> accuracy_sweep(const std::vector<ExperimentSet>& sets,
                                                const std::vector<int>& analyzer_counts,
                                                const std::vector<int>& metric_counts,
                                                double sigma, std::uint64_t seed) {
    std::vector<AccuracyCell> cells;
    for (int m : analyzer_counts)
        cells.push_back({m, 1, selection_accuracy(sets, m, 1, sigma, seed)});
    for (int k : metric_counts)
        cells.push_back({3, k, selection_accuracy(sets, 3, k, sigma, seed)});
    return cells;
}

// ---------------------------------------------------------------------------
// Synthetic fixture sets and disk form
// ---------------------------------------------------------------------------

inline std::vector<ExperimentSet> make_synthetic_sets(int n_sets, int candidates_per_set,
                                                      std::uint64_t seed) {
    std::vector<ExperimentSet> sets;
    for (int s = 0; s < n_sets; ++s) {
        CounterRng rng(derive_seed(seed, "synthetic-set", static_cast<std::uint64_t>(s)));
        ExperimentSet set;
        set.direction = (s % 2 == 0) ? dsl::Direction::Maximize : dsl::Direction::Minimize;
        for (int i = 0; i < candidates_per_set; ++i) {
            set.candidate_ids.push_back(i);
            set.gt_values.push_back(rng.uniform(0.0, 1.0));
        }
        sets.push_back(std::move(set));
    }
    return sets;
}

inline void save_set(const ExperimentSet& set, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["candidate_ids"] = set.candidate_ids;
    j["gt_values"] = set.gt_values;
    j["direction"] = std::string(dsl::to_string(set.direction));
    std::ofstream out(dir / "meta.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / "meta.json").string());
    out << j.dump(2) << '\n';
}

inline ExperimentSet load_set(const std::filesystem::path& dir) {
    std::ifstream in(dir / "meta.json", std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + (dir / "meta.json").string());
    nlohmann::json j = nlohmann::json::parse(in);
    ExperimentSet set;
    set.candidate_ids = j.at("candidate_ids").get<std::vector<int>>();
    if (j.contains("gt_values")) {
        set.gt_values = j.at("gt_values").get<std::vector<double>>();
    } else {
        // recompute from the candidate tables next to the meta file
        auto env = envs::make_env(j.at("env").get<std::string>());
        for (int id : set.candidate_ids) {
            auto table =
                TrajectoryTable::read_csv((dir / ("cand" + std::to_string(id) + ".csv")).string());
            set.gt_values.push_back(envs::ground_truth(env, table));
        }
    }
    dsl::Direction dir_value;
    if (!dsl::parse_direction(j.at("direction").get<std::string>(), dir_value))
        throw std::runtime_error("bad direction in " + (dir / "meta.json").string());
    set.direction = dir_value;
    if (set.gt_values.size() != set.candidate_ids.size())
        throw std::runtime_error("meta.json arrays disagree in " + dir.string());
    return set;
}

inline void save_sets(const std::vector<ExperimentSet>& sets,
                      const std::filesystem::path& dir) {
    for (std::size_t i = 0; i < sets.size(); ++i)
        save_set(sets[i], dir / ("set" + std::to_string(i)));
}

inline std::vector<ExperimentSet> load_sets(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> set_dirs;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_directory() && std::filesystem::exists(entry.path() / "meta.json"))
            set_dirs.push_back(entry.path());
    std::sort(set_dirs.begin(), set_dirs.end());
    std::vector<ExperimentSet> sets;
    for (const auto& d : set_dirs) sets.push_back(load_set(d));
    if (sets.empty()) throw std::runtime_error("no experiment sets under " + dir.string());
    return sets;
}

}  // namespace rewardlab::sweep
