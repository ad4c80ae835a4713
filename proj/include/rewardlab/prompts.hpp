#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rewardlab::prompts {

inline constexpr std::string_view kPromptsVersion = "1";

// Compact language reference embedded in agent prompts. The full grammar
// lives in docs/grammar.md.
inline constexpr std::string_view kLanguageReference =
    "Expressions are written in a small arithmetic language over named\n"
    "transition fields:\n"
    "  s.<name>   value of a state dimension before the step\n"
    "  sn.<name>  value of a state dimension after the step\n"
    "  a.<name>   value of an action dimension\n"
    "Operators: + - * / ^ (power), unary -, comparisons < <= > >= == which\n"
    "yield 1.0 or 0.0. Functions: abs(x), exp(x), tanh(x), sqrt(x), sign(x),\n"
    "min(x, y), max(x, y), if(cond, then, else), clip(x, lo, hi).\n"
    "Number literals are plain decimals. There are no loops, no variables\n"
    "and no function definitions: one single expression, evaluated per\n"
    "transition. Arithmetic is total: division by zero gives 0, sqrt of a\n"
    "negative gives 0, non-finite intermediates collapse to 0.";

// ---------------------------------------------------------------------------
// {placeholder} substitution
// ---------------------------------------------------------------------------

inline std::string render_template(std::string_view text,
                                   const std::map<std::string, std::string>& vars) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        char c = text[i];
        if (c == '{') {
            std::size_t end = text.find('}', i + 1);
            if (end == std::string_view::npos)
                throw std::invalid_argument("unterminated placeholder in prompt template");
            std::string key(text.substr(i + 1, end - i - 1));
            auto it = vars.find(key);
            if (it == vars.end())
                throw std::invalid_argument("no value for prompt placeholder {" + key + "}");
            out += it->second;
            i = end + 1;
        } else {
            out += c;
            ++i;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Template set: built-in defaults, optionally overridden from a directory of
// <name>.txt files so prompts can be versioned and edited without rebuilds.
// ---------------------------------------------------------------------------

inline const std::map<std::string, std::string>& builtin_templates() {
    static const std::map<std::string, std::string> templates = {
        {"mapping_system",
         "You label the dimensions of a control system. Given a plain-text system\n"
         "description, you assign a short identifier to every state dimension and every\n"
         "action dimension, in the order the description lists them."},

        {"mapping_user",
         "System description:\n"
         "{system_description}\n"
         "\n"
         "The system has exactly {state_count} state dimensions and {action_count} action\n"
         "dimensions. Reply with exactly two lines:\n"
         "states: <comma-separated identifiers, one per state dimension, in order>\n"
         "actions: <comma-separated identifiers, one per action dimension, in order>\n"
         "Identifiers must be lowercase words joined by underscores."},

        {"mapping_retry",
         "Your previous answer did not match the declared dimensions: {discrepancy}\n"
         "Reply again with exactly two lines (states: ... / actions: ...) containing\n"
         "exactly {state_count} state identifiers and {action_count} action identifiers."},

        {"generator_system",
         "You design reward functions for reinforcement-learning control tasks. You will\n"
         "be given a system description, a task objective and the named state/action\n"
         "dimensions. For every request, reply with exactly one reward expression inside\n"
         "a fenced code block (```), and nothing else in the block. The expression is\n"
         "evaluated once per transition and its per-step values are summed by the\n"
         "training algorithm, so higher values must mean better behavior.\n"
         "\n"
         "{language_reference}"},

        {"propose_user",
         "System description:\n"
         "{system_description}\n"
         "\n"
         "Task objective: {task_objective}\n"
         "\n"
         "Dimension names:\n"
         "{state_action_map}\n"
         "\n"
         "Propose reward function candidate {index} of {count}. Make it distinct from\n"
         "your previous candidates. Reply with one expression in a fenced code block."},

        {"repair_user",
         "That candidate failed validation: {failure}\n"
         "The rejected expression was:\n"
         "```\n"
         "{source}\n"
         "```\n"
         "Reply with a corrected expression in a fenced code block."},

        {"mutate_user",
         "Iteration {iteration}. The best candidate of the previous iteration was:\n"
         "```\n"
         "{best_code}\n"
         "```\n"
         "Its measured performance:\n"
         "{metric_feedback}\n"
         "\n"
         "Generate variation {index} of {count} of this reward function: keep what works,\n"
         "change one aspect that could improve the measured performance. Reply with one\n"
         "expression in a fenced code block."},

        {"planner_system",
         "You analyze reinforcement-learning tasks and design numerical evaluation\n"
         "criteria. Work strictly from the provided system description and objective."},

        {"planner_insights_user",
         "System description:\n"
         "{system_description}\n"
         "\n"
         "Task objective: {task_objective}\n"
         "\n"
         "Think step by step: what would a well-behaved policy for this objective look\n"
         "like in terms of the listed state and action dimensions? Which quantities\n"
         "distinguish good behavior from bad behavior? Do not propose metrics yet."},

        {"planner_metrics_user",
         "Based on your analysis, propose {count} distinct numerical measurement(s) for\n"
         "judging trained policies from logged transition data. For each one reply with\n"
         "a block of exactly three lines:\n"
         "measurement: <one-line description of the quantity>\n"
         "rationale: <why it captures the objective>\n"
         "criteria: <how candidates should be ranked by it, including whether lower or\n"
         "higher is better>"},

        {"coder_system",
         "You translate measurement descriptions into executable scoring programs. Reply\n"
         "with exactly three lines and nothing else:\n"
         "expr: <per-transition expression>\n"
         "aggregator: <one of mean, sum, final, max, min applied over all transitions>\n"
         "direction: <minimize or maximize, how the aggregate ranks candidates>\n"
         "\n"
         "{language_reference}"},

        {"coder_user",
         "Measurement to implement: {measurement}\n"
         "Rationale: {rationale}\n"
         "Ranking criteria: {criteria}\n"
         "\n"
         "Dimension names:\n"
         "{state_action_map}\n"
         "\n"
         "Reply with the three lines (expr / aggregator / direction)."},

        {"coder_repair_user",
         "That program failed validation: {failure}\n"
         "Your previous reply was:\n"
         "{source}\n"
         "Reply again with the three corrected lines (expr / aggregator / direction)."},

        {"coder_direction_user",
         "Your reply did not state a ranking direction. Reply with a single line:\n"
         "direction: minimize\n"
         "or\n"
         "direction: maximize"},
    };
    return templates;
}

class PromptLibrary {
public:
    static PromptLibrary builtin() { return PromptLibrary(builtin_templates()); }

    // Built-in templates overridden by <name>.txt files found in `dir`.
    static PromptLibrary from_dir(const std::filesystem::path& dir) {
        PromptLibrary lib = builtin();
        for (const auto& entry : std::filesystem::directory_iterator(dir)) {
            if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
            std::ifstream in(entry.path(), std::ios::binary);
            std::ostringstream buf;
            buf << in.rdbuf();
            lib.templates_[entry.path().stem().string()] = buf.str();
        }
        return lib;
    }

    const std::string& raw(const std::string& name) const {
        auto it = templates_.find(name);
        if (it == templates_.end())
            throw std::out_of_range("unknown prompt template: " + name);
        return it->second;
    }

    std::string render(const std::string& name,
                       std::map<std::string, std::string> vars = {}) const {
        vars.emplace("language_reference", std::string(kLanguageReference));
        return render_template(raw(name), vars);
    }

    const std::map<std::string, std::string>& all() const { return templates_; }

private:
    explicit PromptLibrary(std::map<std::string, std::string> templates)
        : templates_(std::move(templates)) {}

    std::map<std::string, std::string> templates_;
};

}  // namespace rewardlab::prompts
