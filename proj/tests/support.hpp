#pragma once

// Test-only helpers: an independent reference interpreter for the expression
// language, plus random AST / row generators for property tests. The
// reference interpreter deliberately shares no code with the library
// implementation; it re-derives the documented semantics from scratch.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rewardlab/dsl.hpp"
#include "rewardlab/rng.hpp"

namespace testsupport {

using rewardlab::CounterRng;
namespace dsl = rewardlab::dsl;

// ---------------------------------------------------------------------------
// Reference interpreter (independent oracle)
// ---------------------------------------------------------------------------

inline double ref_eval(const dsl::Expr& e, const std::map<std::string, double>& row);

inline double ref_guard(double v) { return std::isfinite(v) ? v : 0.0; }

inline double ref_call(const std::string& name, const std::vector<double>& v) {
    if (name == "abs") return v[0] < 0 ? -v[0] : v[0];
    if (name == "exp") {
        double r = std::exp(v[0]);
        if (r > 1e18) return 1e18;
        return ref_guard(r);
    }
    if (name == "tanh") return std::tanh(v[0]);
    if (name == "sqrt") return v[0] < 0 ? 0.0 : std::sqrt(v[0]);
    if (name == "sign") {
        if (v[0] > 0) return 1.0;
        if (v[0] < 0) return -1.0;
        return 0.0;
    }
    if (name == "min") return v[0] < v[1] ? v[0] : v[1];
    if (name == "max") return v[0] > v[1] ? v[0] : v[1];
    if (name == "if") return v[0] != 0.0 ? v[1] : v[2];
    if (name == "clip") {
        double x = v[0] > v[1] ? v[0] : v[1];  // max(x, lo)
        return x < v[2] ? x : v[2];            // min(.., hi)
    }
    throw std::runtime_error("reference interpreter: unknown function " + name);
}

inline double ref_eval(const dsl::Expr& e, const std::map<std::string, double>& row) {
    if (auto* c = std::get_if<dsl::Expr::Const>(&e.node)) return c->value;
    if (auto* r = std::get_if<dsl::Expr::Ref>(&e.node)) {
        std::string key;
        switch (r->kind) {
            case dsl::RefKind::State: key = "s." + r->name; break;
            case dsl::RefKind::Action: key = "a." + r->name; break;
            case dsl::RefKind::NextState: key = "sn." + r->name; break;
        }
        return row.at(key);
    }
    if (auto* n = std::get_if<dsl::Expr::Neg>(&e.node)) return -ref_eval(*n->arg, row);
    if (auto* b = std::get_if<dsl::Expr::Infix>(&e.node)) {
        double lhs = ref_eval(*b->lhs, row);
        double rhs = ref_eval(*b->rhs, row);
        switch (b->op) {
            case dsl::InfixOp::Add: return ref_guard(lhs + rhs);
            case dsl::InfixOp::Sub: return ref_guard(lhs - rhs);
            case dsl::InfixOp::Mul: return ref_guard(lhs * rhs);
            case dsl::InfixOp::Div: return rhs == 0.0 ? 0.0 : ref_guard(lhs / rhs);
            case dsl::InfixOp::Pow:
                if (lhs == 0.0 && rhs < 0.0) return 0.0;
                return ref_guard(std::pow(lhs, rhs));
        }
    }
    if (auto* c = std::get_if<dsl::Expr::Cmp>(&e.node)) {
        double lhs = ref_eval(*c->lhs, row);
        double rhs = ref_eval(*c->rhs, row);
        switch (c->op) {
            case dsl::CmpOp::Lt: return lhs < rhs ? 1.0 : 0.0;
            case dsl::CmpOp::Le: return lhs <= rhs ? 1.0 : 0.0;
            case dsl::CmpOp::Gt: return lhs > rhs ? 1.0 : 0.0;
            case dsl::CmpOp::Ge: return lhs >= rhs ? 1.0 : 0.0;
            case dsl::CmpOp::Eq: return lhs == rhs ? 1.0 : 0.0;
        }
    }
    const auto& call = std::get<dsl::Expr::Call>(e.node);
    std::vector<double> args;
    for (const auto& a : call.args) args.push_back(ref_eval(*a, row));
    return ref_call(call.name, args);
}

// ---------------------------------------------------------------------------
// Random AST / row generation
// ---------------------------------------------------------------------------

inline dsl::ExprPtr random_leaf(CounterRng& rng, const dsl::Schema& schema) {
    double roll = rng.uniform();
    if (roll < 0.4) {
        static const double specials[] = {0.0, 1.0, -1.0, 0.5, 2.0, 100.0, 1e-6};
        if (rng.uniform() < 0.3)
            return dsl::make_const(specials[rng.next_u64() % 7]);
        return dsl::make_const(rng.uniform(-10.0, 10.0));
    }
    bool has_actions = !schema.action_names.empty();
    double kind_roll = rng.uniform();
    if (has_actions && kind_roll < 0.25) {
        const auto& name = schema.action_names[rng.next_u64() % schema.action_names.size()];
        return dsl::make_ref(dsl::RefKind::Action, name);
    }
    const auto& name = schema.state_names[rng.next_u64() % schema.state_names.size()];
    return dsl::make_ref(kind_roll < 0.6 ? dsl::RefKind::State : dsl::RefKind::NextState, name);
}

// Always valid against the schema (builtins called with correct arity).
inline dsl::ExprPtr random_expr(CounterRng& rng, const dsl::Schema& schema, int depth) {
    if (depth <= 0) return random_leaf(rng, schema);
    double roll = rng.uniform();
    if (roll < 0.15) return random_leaf(rng, schema);
    if (roll < 0.25) return dsl::make_neg(random_expr(rng, schema, depth - 1));
    if (roll < 0.55) {
        static const dsl::InfixOp ops[] = {dsl::InfixOp::Add, dsl::InfixOp::Sub,
                                           dsl::InfixOp::Mul, dsl::InfixOp::Div,
                                           dsl::InfixOp::Pow};
        return dsl::make_infix(ops[rng.next_u64() % 5], random_expr(rng, schema, depth - 1),
                               random_expr(rng, schema, depth - 1));
    }
    if (roll < 0.65) {
        static const dsl::CmpOp ops[] = {dsl::CmpOp::Lt, dsl::CmpOp::Le, dsl::CmpOp::Gt,
                                         dsl::CmpOp::Ge, dsl::CmpOp::Eq};
        return dsl::make_cmp(ops[rng.next_u64() % 5], random_expr(rng, schema, depth - 1),
                             random_expr(rng, schema, depth - 1));
    }
    const auto& builtin = dsl::kBuiltins[rng.next_u64() % dsl::kBuiltins.size()];
    std::vector<dsl::ExprPtr> args;
    for (int i = 0; i < builtin.arity; ++i) args.push_back(random_expr(rng, schema, depth - 1));
    return dsl::make_call(std::string(builtin.name), std::move(args));
}

inline double random_value(CounterRng& rng) {
    double roll = rng.uniform();
    if (roll < 0.1) return 0.0;
    if (roll < 0.15) return rng.uniform(-1e6, 1e6);
    return rng.uniform(-5.0, 5.0);
}

inline dsl::NamedRow random_row(CounterRng& rng, const dsl::Schema& schema) {
    dsl::NamedRow row;
    for (const auto& n : schema.state_names) {
        row["s." + n] = random_value(rng);
        row["sn." + n] = random_value(rng);
    }
    for (const auto& n : schema.action_names) row["a." + n] = random_value(rng);
    return row;
}

inline dsl::Schema test_schema() {
    return dsl::Schema{{"x", "vx", "pole_angle"}, {"force"}};
}

}  // namespace testsupport
