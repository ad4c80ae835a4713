#pragma once

#include <algorithm>
#include <charconv>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rewardlab/dsl.hpp"
#include "rewardlab/env.hpp"
#include "rewardlab/generator.hpp"
#include "rewardlab/llm.hpp"
#include "rewardlab/metric.hpp"
#include "rewardlab/prompts.hpp"
#include "rewardlab/table.hpp"

namespace rewardlab::council {

struct EmptyProposal : std::runtime_error {
    explicit EmptyProposal(const std::string& what) : std::runtime_error(what) {}
};
struct CodingFailed : std::runtime_error {
    explicit CodingFailed(const std::string& what) : std::runtime_error(what) {}
};
struct CouncilBuildFailed : std::runtime_error {
    explicit CouncilBuildFailed(const std::string& what) : std::runtime_error(what) {}
};
struct NoCandidates : std::runtime_error {
    explicit NoCandidates(const std::string& what) : std::runtime_error(what) {}
};

struct MetricProposal {
    std::string description;
    std::string rationale;
    std::string criteria;
};

// One council member: a validated metric program plus the ranking rule
// (direction-ordered sort with lowest-id tie-break). When an analyzer
// proposes several metrics, it votes by the first and the rest are logged.
struct AnalyzerSubmodule {
    int index = 1;  // 1-based position in the council
    MetricProposal proposal;
    dsl::MetricProgram metric;
    std::vector<dsl::MetricProgram> extra_metrics;
};

struct Council {
    std::vector<AnalyzerSubmodule> analyzers;
    int size() const { return static_cast<int>(analyzers.size()); }
};

// ---------------------------------------------------------------------------
// Selection core (pure voting over a score matrix)
// ---------------------------------------------------------------------------

struct AnalyzerScores {
    std::vector<double> values;  // one per candidate, aligned with ids
    dsl::Direction direction = dsl::Direction::Minimize;
};

struct SelectionResult {
    int winner_id = -1;
    std::vector<std::vector<int>> rankings;  // per analyzer: candidate ids, best first
    std::map<int, int> tally;                // candidate id -> votes
    bool tie_broken = false;
};

// Deterministic per-analyzer ranking: order by the analyzer's direction,
// ties by lowest candidate id.
inline std::vector<int> rank_candidates(const AnalyzerScores& scores,
                                        const std::vector<int>& ids) {
    std::vector<std::size_t> order(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        double va = scores.values[a], vb = scores.values[b];
        if (va != vb)
            return scores.direction == dsl::Direction::Minimize ? va < vb : va > vb;
        return ids[a] < ids[b];
    });
    std::vector<int> ranked;
    ranked.reserve(ids.size());
    for (std::size_t i : order) ranked.push_back(ids[i]);
    return ranked;
}

// Plurality vote; a tally tie is broken by analyzer #1's ranking, then by
// lowest id.
inline SelectionResult select_from_scores(const std::vector<AnalyzerScores>& scores,
                                          const std::vector<int>& ids) {
    if (ids.empty()) throw NoCandidates("selection over an empty candidate set");
    if (scores.empty()) throw std::invalid_argument("selection needs at least one analyzer");
    for (const auto& s : scores)
        if (s.values.size() != ids.size())
            throw std::invalid_argument("score vector does not match candidate ids");

    SelectionResult result;
    for (const auto& s : scores) {
        auto ranked = rank_candidates(s, ids);
        result.tally[ranked.front()] += 1;
        result.rankings.push_back(std::move(ranked));
    }

    int best_votes = 0;
    for (const auto& [id, votes] : result.tally) best_votes = std::max(best_votes, votes);
    std::vector<int> leaders;
    for (const auto& [id, votes] : result.tally)
        if (votes == best_votes) leaders.push_back(id);

    if (leaders.size() == 1) {
        result.winner_id = leaders.front();
        return result;
    }

    result.tie_broken = true;
    const auto& first_ranking = result.rankings.front();
    for (int id : first_ranking) {
        if (std::find(leaders.begin(), leaders.end(), id) != leaders.end()) {
            result.winner_id = id;
            return result;
        }
    }
    result.winner_id = *std::min_element(leaders.begin(), leaders.end());
    return result;
}

// ---------------------------------------------------------------------------
// Selection over trajectory tables
// ---------------------------------------------------------------------------

using CandidateTables = std::map<int, const TrajectoryTable*>;

inline SelectionResult select(const Council& council, const CandidateTables& tables) {
    if (tables.empty()) throw NoCandidates("no candidate tables to select from");
    std::vector<int> ids;
    for (const auto& [id, table] : tables) ids.push_back(id);

    std::vector<AnalyzerScores> scores;
    for (const auto& analyzer : council.analyzers) {
        AnalyzerScores s;
        s.direction = analyzer.metric.direction;
        for (int id : ids) s.values.push_back(dsl::eval_metric(analyzer.metric, *tables.at(id)));
        scores.push_back(std::move(s));
    }
    return select_from_scores(scores, ids);
}

// The with-metrics mode: argbest of the environment's ground-truth metric,
// ties to the lowest id.
inline int select_with_ground_truth(const envs::EnvSpec& env, const CandidateTables& tables) {
    if (tables.empty()) throw NoCandidates("no candidate tables to select from");
    std::optional<int> best_id;
    double best_value = 0.0;
    const bool minimize = env.ground_truth_metric.direction == dsl::Direction::Minimize;
    for (const auto& [id, table] : tables) {
        double v = envs::ground_truth(env, *table);
        if (!best_id || (minimize ? v < best_value : v > best_value)) {
            best_id = id;
            best_value = v;
        }
    }
    return *best_id;
}

// Per-analyzer metric values for one candidate's table, formatted as the
// mutation feedback block.
inline std::string describe_scores(const Council& council, const TrajectoryTable& table) {
    std::ostringstream out;
    for (const auto& analyzer : council.analyzers) {
        double v = dsl::eval_metric(analyzer.metric, table);
        char buf[64];
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
        out << "analyzer " << analyzer.index << " [" << analyzer.proposal.description << ", "
            << dsl::to_string(analyzer.metric.direction) << "]: "
            << std::string_view(buf, static_cast<std::size_t>(ptr - buf)) << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Planner / coder agents
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<MetricProposal> parse_proposals(const std::string& text) {
    std::vector<MetricProposal> proposals;
    std::istringstream in(text);
    std::string line;
    MetricProposal current;
    bool open = false;
    auto flush = [&] {
        if (open && !current.description.empty()) proposals.push_back(current);
        current = {};
        open = false;
    };
    while (std::getline(in, line)) {
        std::string t = gen::detail::trim(line);
        std::string low = gen::detail::lower(t);
        if (low.rfind("measurement:", 0) == 0) {
            flush();
            open = true;
            current.description = gen::detail::trim(t.substr(12));
        } else if (low.rfind("rationale:", 0) == 0 && open) {
            current.rationale = gen::detail::trim(t.substr(10));
        } else if (low.rfind("criteria:", 0) == 0 && open) {
            current.criteria = gen::detail::trim(t.substr(9));
        } else if (open && !t.empty()) {
            // continuation of the last field
            std::string* tail = !current.criteria.empty()    ? &current.criteria
                                : !current.rationale.empty() ? &current.rationale
                                                             : &current.description;
            *tail += " " + t;
        }
    }
    flush();
    return proposals;
}

struct ParsedMetric {
    std::optional<std::string> expr;
    std::optional<dsl::Aggregator> aggregator;
    std::optional<dsl::Direction> direction;
};

inline ParsedMetric parse_metric_response(const std::string& text) {
    ParsedMetric out;
    if (auto e = gen::keyed_line(text, "expr")) out.expr = gen::extract_expression(*e);
    if (auto a = gen::keyed_line(text, "aggregator")) {
        dsl::Aggregator agg;
        if (dsl::parse_aggregator(gen::detail::lower(gen::detail::trim(*a)), agg))
            out.aggregator = agg;
    }
    if (auto d = gen::keyed_line(text, "direction")) {
        dsl::Direction dir;
        if (dsl::parse_direction(gen::detail::lower(gen::detail::trim(*d)), dir))
            out.direction = dir;
    }
    return out;
}

}  // namespace detail

struct CouncilConfig {
    std::string model = "gpt-4.1-nano";
    double planner_temperature = 0.2;  // ZS-CoT turns
    double coder_temperature = 0.2;    // ZS coding turns
    int max_attempts = 3;              // coder repair budget per metric
};

// Builds analyzer sub-modules through the two-step planning -> coding
// procedure. Council construction happens once per run.
class CouncilBuilder {
public:
    CouncilBuilder(llm::Gateway& gateway, prompts::PromptLibrary prompts, CouncilConfig config)
        : gateway_(&gateway), prompts_(std::move(prompts)), config_(std::move(config)) {}

    // Two-turn ZS-CoT conversation: behavior insights first, then the
    // proposals with the turn-1 reasoning kept in context.
    std::vector<MetricProposal> plan_metrics(const envs::EnvSpec& env, int n_metrics,
                                             const std::string& context) {
        std::vector<llm::ChatMessage> convo{
            {llm::Role::System, prompts_.render("planner_system")},
            {llm::Role::User,
             prompts_.render("planner_insights_user",
                             {{"system_description", env.system_description_text},
                              {"task_objective", env.objective_text}})}};
        std::string insights = gateway_->complete(
            {config_.model, convo, config_.planner_temperature}, context + " insights turn");
        convo.push_back({llm::Role::Assistant, insights});
        convo.push_back({llm::Role::User, prompts_.render("planner_metrics_user",
                                                          {{"count", std::to_string(n_metrics)}})});
        for (int round = 1; round <= 2; ++round) {
            std::string response = gateway_->complete(
                {config_.model, convo, config_.planner_temperature}, context + " proposals turn");
            convo.push_back({llm::Role::Assistant, response});
            auto proposals = detail::parse_proposals(response);
            if (static_cast<int>(proposals.size()) >= n_metrics) {
                proposals.resize(static_cast<std::size_t>(n_metrics));
                return proposals;
            }
            if (round == 1)
                convo.push_back({llm::Role::User,
                                 prompts_.render("planner_metrics_user",
                                                 {{"count", std::to_string(n_metrics)}})});
        }
        throw EmptyProposal(context + ": planner yielded no parseable proposal");
    }

    // ZS translation of one proposal into a validated metric program, with
    // the same sanity-and-repair budget as the generator.
    dsl::MetricProgram code_metric(const MetricProposal& proposal, const dsl::Schema& schema,
                                   const TrajectoryTable& sample, const std::string& context) {
        std::vector<llm::ChatMessage> convo{
            {llm::Role::System, prompts_.render("coder_system")},
            {llm::Role::User,
             prompts_.render("coder_user",
                             {{"measurement", proposal.description},
                              {"rationale", proposal.rationale.empty() ? "(none given)"
                                                                       : proposal.rationale},
                              {"criteria", proposal.criteria.empty() ? "(none given)"
                                                                     : proposal.criteria},
                              {"state_action_map", schema_text(schema)}})}};
        std::string response =
            gateway_->complete({config_.model, convo, config_.coder_temperature}, context);
        convo.push_back({llm::Role::Assistant, response});

        for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
            auto parsed = detail::parse_metric_response(response);

            // missing direction gets exactly one dedicated re-prompt
            if (parsed.expr && parsed.aggregator && !parsed.direction) {
                convo.push_back({llm::Role::User, prompts_.render("coder_direction_user")});
                std::string dir_reply = gateway_->complete(
                    {config_.model, convo, config_.coder_temperature}, context + " direction");
                convo.push_back({llm::Role::Assistant, dir_reply});
                parsed.direction = detail::parse_metric_response(dir_reply).direction;
                if (!parsed.direction)
                    throw CodingFailed(context + ": no ranking direction after re-prompt");
            }

            std::string failure = validate_metric(parsed, schema, sample);
            if (failure.empty()) {
                auto expr = dsl::parse_expr(*parsed.expr);
                return dsl::MetricProgram{expr.expr, *parsed.aggregator, *parsed.direction,
                                          *parsed.expr};
            }
            if (attempt == config_.max_attempts)
                throw CodingFailed(context + ": " + failure + " (repair budget exhausted)");
            convo.push_back({llm::Role::User, prompts_.render("coder_repair_user",
                                                              {{"failure", failure},
                                                               {"source", response}})});
            response = gateway_->complete({config_.model, convo, config_.coder_temperature},
                                          context + " repair " + std::to_string(attempt));
            convo.push_back({llm::Role::Assistant, response});
        }
        throw CodingFailed(context + ": unreachable");
    }

    // m analyzers, each from an independent planning conversation. A failed
    // analyzer build is retried once, then the run aborts.
    Council build(const envs::EnvSpec& env, const dsl::Schema& schema, int m, int n_metrics,
                  const TrajectoryTable& sample) {
        Council council;
        for (int j = 1; j <= m; ++j) {
            std::string context = "analyzer " + std::to_string(j);
            std::optional<AnalyzerSubmodule> analyzer;
            std::string last_error;
            for (int attempt = 1; attempt <= 2 && !analyzer; ++attempt) {
                try {
                    auto proposals = plan_metrics(env, n_metrics, context);
                    AnalyzerSubmodule built;
                    built.index = j;
                    built.proposal = proposals.front();
                    built.metric = code_metric(proposals.front(), schema, sample,
                                               context + " metric 1");
                    for (std::size_t k = 1; k < proposals.size(); ++k)
                        built.extra_metrics.push_back(
                            code_metric(proposals[k], schema, sample,
                                        context + " metric " + std::to_string(k + 1)));
                    analyzer = std::move(built);
                } catch (const std::exception& ex) {
                    last_error = ex.what();
                }
            }
            if (!analyzer)
                throw CouncilBuildFailed("analyzer " + std::to_string(j) +
                                         " failed twice: " + last_error);
            council.analyzers.push_back(std::move(*analyzer));
        }
        return council;
    }

private:
    static std::string schema_text(const dsl::Schema& schema) {
        gen::StateActionMap map{schema, {}};
        return map.to_prompt_text();
    }

    std::string validate_metric(const detail::ParsedMetric& parsed, const dsl::Schema& schema,
                                const TrajectoryTable& sample) const {
        if (!parsed.expr || parsed.expr->empty()) return "missing expr: line";
        if (!parsed.aggregator) return "missing or unknown aggregator: line";
        if (!parsed.direction) return "missing direction: line";
        auto result = dsl::parse_expr(*parsed.expr);
        if (!result.ok())
            return "parse error at position " + std::to_string(result.error.position) + ": " +
                   result.error.message;
        auto report = dsl::validate(*result.expr, schema);
        if (!report.valid()) return report.joined();
        dsl::MetricProgram program{result.expr, *parsed.aggregator, *parsed.direction,
                                   *parsed.expr};
        double v = dsl::eval_metric(program, sample);
        if (!std::isfinite(v)) return "metric produced a non-finite aggregate on sample data";
        return {};
    }

    llm::Gateway* gateway_;
    prompts::PromptLibrary prompts_;
    CouncilConfig config_;
};

}  // namespace rewardlab::council
