#pragma once

#include <algorithm>
#include <string>
#include <string_view>

#include "rewardlab/dsl.hpp"
#include "rewardlab/table.hpp"

namespace rewardlab::dsl {

enum class Aggregator { Mean, Sum, Final, Max, Min };
enum class Direction { Minimize, Maximize };

inline std::string_view to_string(Aggregator a) {
    switch (a) {
        case Aggregator::Mean: return "mean";
        case Aggregator::Sum: return "sum";
        case Aggregator::Final: return "final";
        case Aggregator::Max: return "max";
        case Aggregator::Min: return "min";
    }
    return "?";
}

inline std::string_view to_string(Direction d) {
    return d == Direction::Minimize ? "minimize" : "maximize";
}

inline bool parse_aggregator(std::string_view text, Aggregator& out) {
    if (text == "mean") out = Aggregator::Mean;
    else if (text == "sum") out = Aggregator::Sum;
    else if (text == "final") out = Aggregator::Final;
    else if (text == "max") out = Aggregator::Max;
    else if (text == "min") out = Aggregator::Min;
    else return false;
    return true;
}

inline bool parse_direction(std::string_view text, Direction& out) {
    if (text == "minimize") out = Direction::Minimize;
    else if (text == "maximize") out = Direction::Maximize;
    else return false;
    return true;
}

// A trajectory-level measurement: a per-row expression, an aggregator over
// all rows, and the ranking direction.
struct MetricProgram {
    ExprPtr step_expr;
    Aggregator aggregator = Aggregator::Mean;
    Direction direction = Direction::Minimize;
    std::string source_text;  // the expression as emitted/printed
};

inline double eval_metric(const MetricProgram& metric, const TrajectoryTable& table) {
    if (table.empty()) throw EmptyTable("eval_metric: empty trajectory table");
    RowLayout layout{table.columns()};
    CompiledExpr compiled = CompiledExpr::compile(*metric.step_expr, layout);
    const std::size_t n = table.rows();
    switch (metric.aggregator) {
        case Aggregator::Final:
            return compiled.eval(table.row(n - 1));
        case Aggregator::Mean: {
            double sum = 0.0;
            for (std::size_t r = 0; r < n; ++r) sum += compiled.eval(table.row(r));
            return sum / static_cast<double>(n);
        }
        case Aggregator::Sum: {
            double sum = 0.0;
            for (std::size_t r = 0; r < n; ++r) sum += compiled.eval(table.row(r));
            return sum;
        }
        case Aggregator::Max: {
            double best = compiled.eval(table.row(0));
            for (std::size_t r = 1; r < n; ++r) best = std::max(best, compiled.eval(table.row(r)));
            return best;
        }
        case Aggregator::Min: {
            double best = compiled.eval(table.row(0));
            for (std::size_t r = 1; r < n; ++r) best = std::min(best, compiled.eval(table.row(r)));
            return best;
        }
    }
    return 0.0;
}

}  // namespace rewardlab::dsl
