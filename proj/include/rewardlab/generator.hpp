#pragma once

#include <cctype>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rewardlab/dsl.hpp"
#include "rewardlab/env.hpp"
#include "rewardlab/llm.hpp"
#include "rewardlab/prompts.hpp"
#include "rewardlab/table.hpp"
#include "rewardlab/trainer.hpp"

namespace rewardlab::gen {

struct MappingMismatch : std::runtime_error {
    explicit MappingMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct AllCandidatesFailed : std::runtime_error {
    explicit AllCandidatesFailed(const std::string& what) : std::runtime_error(what) {}
};

// Agent-produced naming of the environment's vector dimensions. The schema's
// name order IS the index map: schema.state_names[i] names state index i.
struct StateActionMap {
    dsl::Schema schema;
    std::vector<std::string> prose_notes;  // optional per-dimension notes

    std::string to_prompt_text() const {
        std::string out = "states: ";
        for (std::size_t i = 0; i < schema.state_names.size(); ++i) {
            if (i) out += ", ";
            out += schema.state_names[i];
        }
        out += "\nactions: ";
        for (std::size_t i = 0; i < schema.action_names.size(); ++i) {
            if (i) out += ", ";
            out += schema.action_names[i];
        }
        return out;
    }
};

struct SanityReport {
    bool passed = false;
    int attempts = 0;
    std::vector<std::pair<int, std::string>> failures;  // (attempt, message fed back)
};

struct CandidateRecord {
    int id = 0;
    int iteration = 1;
    std::string source_text;
    std::optional<dsl::RewardProgram> program;  // present iff sanity passed
    SanityReport sanity;
    std::optional<int> lineage;  // parent best candidate (iterations >= 2)
};

// ---------------------------------------------------------------------------
// Response parsing helpers
// ---------------------------------------------------------------------------

inline std::string normalize_identifier(std::string_view raw) {
    std::string out;
    bool last_underscore = false;
    for (char c : raw) {
        unsigned char uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc)) {
            out += static_cast<char>(std::tolower(uc));
            last_underscore = false;
        } else if (!out.empty() && !last_underscore) {
            out += '_';
            last_underscore = true;
        }
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    if (out.empty()) out = "x";
    if (std::isdigit(static_cast<unsigned char>(out.front()))) out.insert(out.begin(), '_');
    return out;
}

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline std::vector<std::string> split_csv_names(std::string_view list) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= list.size()) {
        std::size_t end = list.find(',', start);
        if (end == std::string_view::npos) end = list.size();
        std::string item = trim(list.substr(start, end - start));
        if (!item.empty()) out.push_back(normalize_identifier(item));
        start = end + 1;
        if (end == list.size()) break;
    }
    return out;
}

}  // namespace detail

// Value of the first "<key>: value" line, case-insensitive on the key.
inline std::optional<std::string> keyed_line(const std::string& text, const std::string& key) {
    std::istringstream in(text);
    std::string line;
    const std::string want = detail::lower(key);
    while (std::getline(in, line)) {
        std::string t = detail::trim(line);
        if (t.size() <= want.size()) continue;
        if (detail::lower(t.substr(0, want.size())) == want && t[want.size()] == ':')
            return detail::trim(t.substr(want.size() + 1));
    }
    return std::nullopt;
}

struct MappingNames {
    std::vector<std::string> states;
    std::vector<std::string> actions;
};

inline std::optional<MappingNames> parse_mapping_response(const std::string& text) {
    auto states = keyed_line(text, "states");
    auto actions = keyed_line(text, "actions");
    if (!states || !actions) return std::nullopt;
    return MappingNames{detail::split_csv_names(*states), detail::split_csv_names(*actions)};
}

// The expression from an agent reply: the first fenced code block if present
// (minus a language tag line), otherwise the whole reply. Lines are joined
// with spaces; the language is whitespace-insensitive.
inline std::string extract_expression(const std::string& response) {
    std::string body = response;
    std::size_t fence = response.find("```");
    if (fence != std::string::npos) {
        std::size_t start = fence + 3;
        std::size_t end = response.find("```", start);
        if (end != std::string::npos) body = response.substr(start, end - start);
    }
    std::istringstream in(body);
    std::string line;
    std::string joined;
    bool first = true;
    while (std::getline(in, line)) {
        std::string t = detail::trim(line);
        if (t.empty()) continue;
        if (first) {
            first = false;
            // a bare language tag on the fence line is not part of the program
            bool taggy = !t.empty();
            for (char c : t)
                if (!std::isalpha(static_cast<unsigned char>(c))) taggy = false;
            if (taggy && t.size() <= 10) continue;
        }
        if (!joined.empty()) joined += ' ';
        joined += t;
    }
    return joined;
}

// ---------------------------------------------------------------------------
// Sanity check (single attempt; the agent-facing repair loop is in Generator)
// ---------------------------------------------------------------------------

namespace detail {

// Empty string on pass, otherwise the failure message fed back to the agent.
inline std::string check_source(const std::string& source, const dsl::Schema& schema,
                                const TrajectoryTable& sample,
                                dsl::RewardProgram* out_program) {
    if (source.empty()) return "empty reply: expected one expression";
    auto parsed = dsl::parse_expr(source);
    if (!parsed.ok())
        return "parse error at position " + std::to_string(parsed.error.position) + ": " +
               parsed.error.message;
    auto report = dsl::validate(*parsed.expr, schema);
    if (!report.valid()) return report.joined();

    dsl::RowLayout layout{sample.columns()};
    dsl::CompiledExpr compiled = dsl::CompiledExpr::compile(*parsed.expr, layout);
    bool constant = true;
    double first = 0.0;
    for (std::size_t r = 0; r < sample.rows(); ++r) {
        double v = compiled.eval(sample.row(r));
        if (!std::isfinite(v)) return "produced a non-finite value on sample data";
        if (r == 0)
            first = v;
        else if (v != first)
            constant = false;
    }
    if (sample.rows() > 1 && constant) return "degenerate constant reward";
    if (out_program) *out_program = dsl::RewardProgram{parsed.expr, source};
    return {};
}

}  // namespace detail

// Pass requires: parses, validates against the schema, evaluates to finite
// scalars on every sample row, and is not constant across the sample.
inline std::pair<std::optional<dsl::RewardProgram>, SanityReport> sanity_check(
    const std::string& source, const dsl::Schema& schema, const TrajectoryTable& sample) {
    SanityReport report;
    report.attempts = 1;
    dsl::RewardProgram program;
    std::string failure = detail::check_source(source, schema, sample, &program);
    if (failure.empty()) {
        report.passed = true;
        return {std::move(program), std::move(report)};
    }
    report.failures.emplace_back(1, failure);
    return {std::nullopt, std::move(report)};
}

// ---------------------------------------------------------------------------
// Generator agents
// ---------------------------------------------------------------------------

struct GeneratorConfig {
    std::string model = "gpt-4.1-nano";
    double generator_temperature = 1.0;
    double mapping_temperature = 0.2;
    int max_attempts = 3;  // total sanity attempts per candidate
};

// Owns the reward-generation conversation. The conversation starts with the
// initial proposal and is extended by every mutation iteration — one
// conversation across the entire optimization.
class Generator {
public:
    Generator(llm::Gateway& gateway, prompts::PromptLibrary prompts, GeneratorConfig config)
        : gateway_(&gateway), prompts_(std::move(prompts)), config_(std::move(config)) {}

    const GeneratorConfig& config() const { return config_; }
    const std::vector<llm::ChatMessage>& conversation() const { return conversation_; }

    // Extracts the state/action naming from the system description. One
    // re-prompt on a count mismatch, then MappingMismatch.
    StateActionMap map_system(const envs::EnvSpec& env) {
        std::vector<llm::ChatMessage> messages{
            {llm::Role::System, prompts_.render("mapping_system")},
            {llm::Role::User,
             prompts_.render("mapping_user",
                             {{"system_description", env.system_description_text},
                              {"state_count", std::to_string(env.state_dim())},
                              {"action_count", std::to_string(env.action_dim())}})}};
        for (int round = 1; round <= 2; ++round) {
            std::string response = gateway_->complete(
                {config_.model, messages, config_.mapping_temperature}, "mapping agent");
            messages.push_back({llm::Role::Assistant, response});
            auto parsed = parse_mapping_response(response);
            std::string discrepancy;
            if (!parsed) {
                discrepancy = "missing states:/actions: lines";
            } else {
                discrepancy = check_names(env, *parsed);
                if (discrepancy.empty())
                    return StateActionMap{dsl::Schema{parsed->states, parsed->actions}, {}};
            }
            if (round == 1)
                messages.push_back(
                    {llm::Role::User,
                     prompts_.render("mapping_retry",
                                     {{"discrepancy", discrepancy},
                                      {"state_count", std::to_string(env.state_dim())},
                                      {"action_count", std::to_string(env.action_dim())}})});
            else
                throw MappingMismatch("mapping agent disagrees with declared dimensions for '" +
                                      env.name + "': " + discrepancy);
        }
        throw MappingMismatch("unreachable");
    }

    // Zero-shot proposal of n candidates, one agent call per candidate, each
    // with its own sanity/repair loop. Failed candidates are kept (marked
    // failed), not refilled.
    std::vector<CandidateRecord> propose_initial(const envs::EnvSpec& env,
                                                 const StateActionMap& map, int n,
                                                 const TrajectoryTable& sample) {
        if (conversation_.empty())
            conversation_.push_back({llm::Role::System, prompts_.render("generator_system")});
        std::vector<CandidateRecord> records;
        for (int i = 1; i <= n; ++i) {
            std::string prompt =
                prompts_.render("propose_user",
                                {{"system_description", env.system_description_text},
                                 {"task_objective", env.objective_text},
                                 {"state_action_map", map.to_prompt_text()},
                                 {"index", std::to_string(i)},
                                 {"count", std::to_string(n)}});
            records.push_back(run_candidate(prompt, map.schema, sample, 1, std::nullopt,
                                            "iteration 1 candidate " + std::to_string(i)));
        }
        require_any_passed(records, 1);
        return records;
    }

    // Few-shot elitist mutation: continues the same conversation, feeding the
    // best candidate's code and its measured metric values back in.
    std::vector<CandidateRecord> mutate_best(const CandidateRecord& best,
                                             const StateActionMap& map,
                                             const std::string& metric_feedback, int n,
                                             const TrajectoryTable& sample, int iteration) {
        if (!best.sanity.passed)
            throw std::invalid_argument("mutate_best requires a candidate that passed sanity");
        std::vector<CandidateRecord> records;
        for (int i = 1; i <= n; ++i) {
            std::string prompt =
                prompts_.render("mutate_user", {{"iteration", std::to_string(iteration)},
                                                {"best_code", best.source_text},
                                                {"metric_feedback", metric_feedback},
                                                {"index", std::to_string(i)},
                                                {"count", std::to_string(n)}});
            records.push_back(run_candidate(prompt, map.schema, sample, iteration, best.id,
                                            "iteration " + std::to_string(iteration) +
                                                " candidate " + std::to_string(i)));
        }
        require_any_passed(records, iteration);
        return records;
    }

private:
    std::string check_names(const envs::EnvSpec& env, const MappingNames& names) const {
        if (static_cast<int>(names.states.size()) != env.state_dim())
            return "got " + std::to_string(names.states.size()) + " state names, need " +
                   std::to_string(env.state_dim());
        if (static_cast<int>(names.actions.size()) != env.action_dim())
            return "got " + std::to_string(names.actions.size()) + " action names, need " +
                   std::to_string(env.action_dim());
        std::vector<std::string> all = names.states;
        all.insert(all.end(), names.actions.begin(), names.actions.end());
        for (std::size_t i = 0; i < all.size(); ++i)
            for (std::size_t j = i + 1; j < all.size(); ++j)
                if (all[i] == all[j]) return "duplicate identifier '" + all[i] + "'";
        return {};
    }

    CandidateRecord run_candidate(const std::string& prompt, const dsl::Schema& schema,
                                  const TrajectoryTable& sample, int iteration,
                                  std::optional<int> lineage, const std::string& context) {
        CandidateRecord record;
        record.id = next_id_++;
        record.iteration = iteration;
        record.lineage = lineage;

        std::string source = ask(prompt, context);
        for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
            record.sanity.attempts = attempt;
            dsl::RewardProgram program;
            std::string failure = detail::check_source(source, schema, sample, &program);
            if (failure.empty()) {
                record.sanity.passed = true;
                record.source_text = source;
                record.program = std::move(program);
                return record;
            }
            record.sanity.failures.emplace_back(attempt, failure);
            if (attempt == config_.max_attempts) break;
            source = ask(prompts_.render("repair_user", {{"failure", failure},
                                                         {"source", source}}),
                         context + " repair " + std::to_string(attempt));
        }
        record.source_text = source;
        return record;
    }

    std::string ask(const std::string& user_prompt, const std::string& context) {
        conversation_.push_back({llm::Role::User, user_prompt});
        std::string response = gateway_->complete(
            {config_.model, conversation_, config_.generator_temperature}, context);
        conversation_.push_back({llm::Role::Assistant, response});
        return extract_expression(response);
    }

    void require_any_passed(const std::vector<CandidateRecord>& records, int iteration) const {
        for (const auto& r : records)
            if (r.sanity.passed) return;
        throw AllCandidatesFailed("iteration " + std::to_string(iteration) +
                                  ": no candidate passed the sanity check");
    }

    llm::Gateway* gateway_;
    prompts::PromptLibrary prompts_;
    GeneratorConfig config_;
    std::vector<llm::ChatMessage> conversation_;
    int next_id_ = 0;
};

}  // namespace rewardlab::gen
