#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace rewardlab::dsl {

// ---------------------------------------------------------------------------
// AST
// ---------------------------------------------------------------------------

enum class RefKind { State, Action, NextState };
enum class InfixOp { Add, Sub, Mul, Div, Pow };
enum class CmpOp { Lt, Le, Gt, Ge, Eq };

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
    struct Const {
        double value = 0.0;
    };
    struct Ref {
        RefKind kind = RefKind::State;
        std::string name;
    };
    struct Neg {
        ExprPtr arg;
    };
    struct Infix {
        InfixOp op;
        ExprPtr lhs, rhs;
    };
    struct Cmp {
        CmpOp op;
        ExprPtr lhs, rhs;
    };
    // Named functions use call syntax; arity is checked by validate(), not the
    // parser, so a mis-called builtin still produces an AST plus a report.
    struct Call {
        std::string name;
        std::vector<ExprPtr> args;
    };

    std::variant<Const, Ref, Neg, Infix, Cmp, Call> node;
};

inline ExprPtr make_const(double v) { return std::make_shared<Expr>(Expr{Expr::Const{v}}); }
inline ExprPtr make_ref(RefKind k, std::string name) {
    return std::make_shared<Expr>(Expr{Expr::Ref{k, std::move(name)}});
}
// Negated constants fold to a signed constant so that construction and
// parsing agree on one canonical form ("-5" is Const(-5), not Neg(Const 5)).
inline ExprPtr make_neg(ExprPtr a) {
    if (const auto* c = std::get_if<Expr::Const>(&a->node)) return make_const(-c->value);
    return std::make_shared<Expr>(Expr{Expr::Neg{std::move(a)}});
}
inline ExprPtr make_infix(InfixOp op, ExprPtr l, ExprPtr r) {
    return std::make_shared<Expr>(Expr{Expr::Infix{op, std::move(l), std::move(r)}});
}
inline ExprPtr make_cmp(CmpOp op, ExprPtr l, ExprPtr r) {
    return std::make_shared<Expr>(Expr{Expr::Cmp{op, std::move(l), std::move(r)}});
}
inline ExprPtr make_call(std::string name, std::vector<ExprPtr> args) {
    return std::make_shared<Expr>(Expr{Expr::Call{std::move(name), std::move(args)}});
}

// Builtin call table. Arity is enforced by validate().
struct Builtin {
    std::string_view name;
    int arity;
};
inline constexpr std::array<Builtin, 9> kBuiltins = {{
    {"abs", 1},
    {"exp", 1},
    {"tanh", 1},
    {"sqrt", 1},
    {"sign", 1},
    {"min", 2},
    {"max", 2},
    {"if", 3},
    {"clip", 3},
}};

inline const Builtin* find_builtin(std::string_view name) {
    for (const auto& b : kBuiltins)
        if (b.name == name) return &b;
    return nullptr;
}

inline std::string_view ref_prefix(RefKind k) {
    switch (k) {
        case RefKind::State: return "s";
        case RefKind::Action: return "a";
        case RefKind::NextState: return "sn";
    }
    return "?";
}

inline std::string ref_name(RefKind k, std::string_view name) {
    std::string out(ref_prefix(k));
    out += '.';
    out += name;
    return out;
}

// ---------------------------------------------------------------------------
// Structural equality (doubles compared bit-exactly)
// ---------------------------------------------------------------------------

inline bool equal(const Expr& a, const Expr& b);

inline bool equal(const ExprPtr& a, const ExprPtr& b) {
    if (!a || !b) return a == b;
    return equal(*a, *b);
}

inline bool equal(const Expr& a, const Expr& b) {
    if (a.node.index() != b.node.index()) return false;
    return std::visit(
        [&](const auto& x) -> bool {
            using T = std::decay_t<decltype(x)>;
            const auto& y = std::get<T>(b.node);
            if constexpr (std::is_same_v<T, Expr::Const>) {
                std::uint64_t ux, uy;
                static_assert(sizeof(ux) == sizeof(x.value));
                std::memcpy(&ux, &x.value, sizeof(ux));
                std::memcpy(&uy, &y.value, sizeof(uy));
                return ux == uy;
            } else if constexpr (std::is_same_v<T, Expr::Ref>) {
                return x.kind == y.kind && x.name == y.name;
            } else if constexpr (std::is_same_v<T, Expr::Neg>) {
                return equal(x.arg, y.arg);
            } else if constexpr (std::is_same_v<T, Expr::Infix>) {
                return x.op == y.op && equal(x.lhs, y.lhs) && equal(x.rhs, y.rhs);
            } else if constexpr (std::is_same_v<T, Expr::Cmp>) {
                return x.op == y.op && equal(x.lhs, y.lhs) && equal(x.rhs, y.rhs);
            } else {
                if (x.name != y.name || x.args.size() != y.args.size()) return false;
                for (std::size_t i = 0; i < x.args.size(); ++i)
                    if (!equal(x.args[i], y.args[i])) return false;
                return true;
            }
        },
        a.node);
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct ParseError {
    std::size_t position = 0;
    std::string message;
};

struct ParseResult {
    ExprPtr expr;
    ParseError error;
    bool ok() const { return expr != nullptr; }
    explicit operator bool() const { return ok(); }
};

namespace detail {

class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    ParseResult run() {
        skip_ws();
        if (at_end()) return fail(pos_, "empty expression");
        ExprPtr e = parse_expression();
        if (!e) return {nullptr, error_};
        skip_ws();
        if (!at_end()) return fail(pos_, "unexpected trailing input");
        return {e, {}};
    }

private:
    static constexpr int kMaxDepth = 200;

    std::string_view text_;
    std::size_t pos_ = 0;
    int depth_ = 0;
    ParseError error_;

    bool at_end() const { return pos_ >= text_.size(); }
    char peek() const { return at_end() ? '\0' : text_[pos_]; }
    char peek2() const { return pos_ + 1 < text_.size() ? text_[pos_ + 1] : '\0'; }
    void advance() { ++pos_; }

    void skip_ws() {
        while (!at_end() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    ParseResult fail(std::size_t at, std::string msg) {
        error_ = {at, std::move(msg)};
        return {nullptr, error_};
    }
    ExprPtr err(std::size_t at, std::string msg) {
        error_ = {at, std::move(msg)};
        return nullptr;
    }

    struct DepthGuard {
        Parser& p;
        bool ok;
        explicit DepthGuard(Parser& parser) : p(parser), ok(++p.depth_ <= kMaxDepth) {}
        ~DepthGuard() { --p.depth_; }
    };

    // comparison := sum ((< | <= | > | >= | ==) sum)*
    ExprPtr parse_expression() {
        DepthGuard g(*this);
        if (!g.ok) return err(pos_, "expression too deeply nested");
        ExprPtr lhs = parse_sum();
        if (!lhs) return nullptr;
        for (;;) {
            skip_ws();
            std::optional<CmpOp> op;
            std::size_t w = 0;
            if (peek() == '<') { op = peek2() == '=' ? CmpOp::Le : CmpOp::Lt; w = peek2() == '=' ? 2 : 1; }
            else if (peek() == '>') { op = peek2() == '=' ? CmpOp::Ge : CmpOp::Gt; w = peek2() == '=' ? 2 : 1; }
            else if (peek() == '=' && peek2() == '=') { op = CmpOp::Eq; w = 2; }
            if (!op) return lhs;
            pos_ += w;
            ExprPtr rhs = parse_sum();
            if (!rhs) return nullptr;
            lhs = make_cmp(*op, std::move(lhs), std::move(rhs));
        }
    }

    ExprPtr parse_sum() {
        DepthGuard g(*this);
        if (!g.ok) return err(pos_, "expression too deeply nested");
        ExprPtr lhs = parse_term();
        if (!lhs) return nullptr;
        for (;;) {
            skip_ws();
            char c = peek();
            if (c != '+' && c != '-') return lhs;
            advance();
            ExprPtr rhs = parse_term();
            if (!rhs) return nullptr;
            lhs = make_infix(c == '+' ? InfixOp::Add : InfixOp::Sub, std::move(lhs), std::move(rhs));
        }
    }

    ExprPtr parse_term() {
        DepthGuard g(*this);
        if (!g.ok) return err(pos_, "expression too deeply nested");
        ExprPtr lhs = parse_factor();
        if (!lhs) return nullptr;
        for (;;) {
            skip_ws();
            char c = peek();
            if (c != '*' && c != '/') return lhs;
            advance();
            ExprPtr rhs = parse_factor();
            if (!rhs) return nullptr;
            lhs = make_infix(c == '*' ? InfixOp::Mul : InfixOp::Div, std::move(lhs), std::move(rhs));
        }
    }

    // factor := ('-' | '+') factor | power
    ExprPtr parse_factor() {
        DepthGuard g(*this);
        if (!g.ok) return err(pos_, "expression too deeply nested");
        skip_ws();
        if (peek() == '-') {
            advance();
            ExprPtr inner = parse_factor();
            if (!inner) return nullptr;
            return make_neg(std::move(inner));
        }
        if (peek() == '+') {
            advance();
            return parse_factor();
        }
        return parse_power();
    }

    // power := primary ('^' factor)?   (right-associative, exponent may be signed)
    ExprPtr parse_power() {
        DepthGuard g(*this);
        if (!g.ok) return err(pos_, "expression too deeply nested");
        ExprPtr base = parse_primary();
        if (!base) return nullptr;
        skip_ws();
        if (peek() == '^') {
            advance();
            ExprPtr exponent = parse_factor();
            if (!exponent) return nullptr;
            return make_infix(InfixOp::Pow, std::move(base), std::move(exponent));
        }
        return base;
    }

    ExprPtr parse_primary() {
        DepthGuard g(*this);
        if (!g.ok) return err(pos_, "expression too deeply nested");
        skip_ws();
        if (at_end()) return err(pos_, "unexpected end of input");
        char c = peek();
        if (c == '(') {
            advance();
            ExprPtr inner = parse_expression();
            if (!inner) return nullptr;
            skip_ws();
            if (peek() != ')') return err(pos_, "expected ')'");
            advance();
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_ident();
        return err(pos_, std::string("unexpected character '") + c + "'");
    }

    ExprPtr parse_number() {
        std::size_t start = pos_;
        while (!at_end() && (std::isdigit(static_cast<unsigned char>(peek())) || peek() == '.'))
            advance();
        if (!at_end() && (peek() == 'e' || peek() == 'E')) {
            std::size_t mark = pos_;
            advance();
            if (peek() == '+' || peek() == '-') advance();
            if (std::isdigit(static_cast<unsigned char>(peek()))) {
                while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) advance();
            } else {
                pos_ = mark;  // bare 'e' belongs to something else
            }
        }
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, value);
        if (ec != std::errc{} || ptr != text_.data() + pos_)
            return err(start, "malformed number literal");
        if (!std::isfinite(value)) return err(start, "number literal out of range");
        return make_const(value);
    }

    static bool ident_char(char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
    }

    ExprPtr parse_ident() {
        std::size_t start = pos_;
        while (!at_end() && ident_char(peek())) advance();
        std::string_view word = text_.substr(start, pos_ - start);
        skip_ws();
        // Dotted reference: s.<name>, a.<name>, sn.<name>
        if (peek() == '.' && (word == "s" || word == "a" || word == "sn")) {
            advance();
            std::size_t nstart = pos_;
            while (!at_end() && ident_char(peek())) advance();
            if (pos_ == nstart) return err(nstart, "expected identifier after '.'");
            RefKind kind = word == "s"   ? RefKind::State
                           : word == "a" ? RefKind::Action
                                         : RefKind::NextState;
            return make_ref(kind, std::string(text_.substr(nstart, pos_ - nstart)));
        }
        if (peek() == '(') {
            advance();
            std::vector<ExprPtr> args;
            skip_ws();
            if (peek() == ')') {
                advance();
            } else {
                for (;;) {
                    ExprPtr arg = parse_expression();
                    if (!arg) return nullptr;
                    args.push_back(std::move(arg));
                    skip_ws();
                    if (peek() == ',') {
                        advance();
                        continue;
                    }
                    if (peek() == ')') {
                        advance();
                        break;
                    }
                    return err(pos_, "expected ',' or ')' in argument list");
                }
            }
            return make_call(std::string(word), std::move(args));
        }
        return err(start, "bare identifier '" + std::string(word) +
                              "' (expected s./a./sn. reference or function call)");
    }
};

}  // namespace detail

inline ParseResult parse_expr(std::string_view text) {
    return detail::Parser(text).run();
}

// ---------------------------------------------------------------------------
// Schema and validation
// ---------------------------------------------------------------------------

struct Schema {
    std::vector<std::string> state_names;
    std::vector<std::string> action_names;

    bool has(RefKind kind, std::string_view name) const {
        const auto& names = (kind == RefKind::Action) ? action_names : state_names;
        return std::find(names.begin(), names.end(), name) != names.end();
    }
};

struct ValidationReport {
    std::vector<std::string> issues;
    bool valid() const { return issues.empty(); }
    std::string joined() const {
        std::string out;
        for (const auto& m : issues) {
            if (!out.empty()) out += "; ";
            out += m;
        }
        return out;
    }
};

namespace detail {
inline void validate_rec(const Expr& e, const Schema& schema, ValidationReport& report) {
    std::visit(
        [&](const auto& x) {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Expr::Const>) {
                if (!std::isfinite(x.value)) report.issues.push_back("non-finite constant");
            } else if constexpr (std::is_same_v<T, Expr::Ref>) {
                if (!schema.has(x.kind, x.name))
                    report.issues.push_back("unknown identifier '" + ref_name(x.kind, x.name) + "'");
            } else if constexpr (std::is_same_v<T, Expr::Neg>) {
                validate_rec(*x.arg, schema, report);
            } else if constexpr (std::is_same_v<T, Expr::Infix> || std::is_same_v<T, Expr::Cmp>) {
                validate_rec(*x.lhs, schema, report);
                validate_rec(*x.rhs, schema, report);
            } else {
                const Builtin* b = find_builtin(x.name);
                if (!b) {
                    report.issues.push_back("unknown function '" + x.name + "'");
                } else if (static_cast<int>(x.args.size()) != b->arity) {
                    report.issues.push_back("function '" + x.name + "' expects " +
                                            std::to_string(b->arity) + " argument(s), got " +
                                            std::to_string(x.args.size()));
                }
                for (const auto& a : x.args) validate_rec(*a, schema, report);
            }
        },
        e.node);
}
}  // namespace detail

inline ValidationReport validate(const Expr& expr, const Schema& schema) {
    ValidationReport report;
    detail::validate_rec(expr, schema, report);
    return report;
}

// ---------------------------------------------------------------------------
// Total-arithmetic evaluation
// ---------------------------------------------------------------------------

// Thrown only on contract violations (evaluating an unvalidated expression).
struct UnresolvedIdentifier : std::runtime_error {
    explicit UnresolvedIdentifier(const std::string& what) : std::runtime_error(what) {}
};

struct EvalNotes {
    int nonfinite_replacements = 0;
};

namespace detail {

inline double finitize(double v, EvalNotes* notes) {
    if (!std::isfinite(v)) {
        if (notes) ++notes->nonfinite_replacements;
        return 0.0;
    }
    return v;
}

inline double total_div(double a, double b, EvalNotes* notes) {
    if (b == 0.0) return 0.0;
    return finitize(a / b, notes);
}

inline double total_pow(double a, double b, EvalNotes* notes) {
    if (a == 0.0 && b < 0.0) return 0.0;
    return finitize(std::pow(a, b), notes);
}

inline double total_sqrt(double x) { return x < 0.0 ? 0.0 : std::sqrt(x); }

inline double total_exp(double x, EvalNotes* notes) {
    double v = std::exp(x);
    if (v > 1e18) return 1e18;
    return finitize(v, notes);
}

inline double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// clip is clamp with min/max composition, total even when lo > hi.
inline double total_clip(double x, double lo, double hi) {
    return std::min(std::max(x, lo), hi);
}

}  // namespace detail

using NamedRow = std::map<std::string, double>;

// Tree-walking evaluator over a named row. Total: every validated expression
// yields a finite scalar on any finite row. The `if` construct evaluates all
// three arguments (kept in lockstep with the compiled form).
inline double eval_step(const Expr& expr, const NamedRow& row, EvalNotes* notes = nullptr) {
    using namespace detail;
    return std::visit(
        [&](const auto& x) -> double {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Expr::Const>) {
                return x.value;
            } else if constexpr (std::is_same_v<T, Expr::Ref>) {
                auto it = row.find(ref_name(x.kind, x.name));
                if (it == row.end())
                    throw UnresolvedIdentifier("unresolved identifier '" +
                                               ref_name(x.kind, x.name) +
                                               "' at evaluation time (expression not validated)");
                return it->second;
            } else if constexpr (std::is_same_v<T, Expr::Neg>) {
                return -eval_step(*x.arg, row, notes);
            } else if constexpr (std::is_same_v<T, Expr::Infix>) {
                double a = eval_step(*x.lhs, row, notes);
                double b = eval_step(*x.rhs, row, notes);
                switch (x.op) {
                    case InfixOp::Add: return finitize(a + b, notes);
                    case InfixOp::Sub: return finitize(a - b, notes);
                    case InfixOp::Mul: return finitize(a * b, notes);
                    case InfixOp::Div: return total_div(a, b, notes);
                    case InfixOp::Pow: return total_pow(a, b, notes);
                }
                return 0.0;
            } else if constexpr (std::is_same_v<T, Expr::Cmp>) {
                double a = eval_step(*x.lhs, row, notes);
                double b = eval_step(*x.rhs, row, notes);
                switch (x.op) {
                    case CmpOp::Lt: return a < b ? 1.0 : 0.0;
                    case CmpOp::Le: return a <= b ? 1.0 : 0.0;
                    case CmpOp::Gt: return a > b ? 1.0 : 0.0;
                    case CmpOp::Ge: return a >= b ? 1.0 : 0.0;
                    case CmpOp::Eq: return a == b ? 1.0 : 0.0;
                }
                return 0.0;
            } else {
                std::vector<double> vals;
                vals.reserve(x.args.size());
                for (const auto& a : x.args) vals.push_back(eval_step(*a, row, notes));
                if (x.name == "abs") return std::fabs(vals[0]);
                if (x.name == "exp") return total_exp(vals[0], notes);
                if (x.name == "tanh") return std::tanh(vals[0]);
                if (x.name == "sqrt") return total_sqrt(vals[0]);
                if (x.name == "sign") return sign_of(vals[0]);
                if (x.name == "min") return std::min(vals[0], vals[1]);
                if (x.name == "max") return std::max(vals[0], vals[1]);
                if (x.name == "if") return vals[0] != 0.0 ? vals[1] : vals[2];
                if (x.name == "clip") return total_clip(vals[0], vals[1], vals[2]);
                throw UnresolvedIdentifier("unknown function '" + x.name +
                                           "' at evaluation time (expression not validated)");
            }
        },
        expr.node);
}

// ---------------------------------------------------------------------------
// Pretty-printer (canonical form; parse(print(e)) is structurally equal to e)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
    std::array<char, 64> buf;
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

// Precedence levels, loosest to tightest: cmp < add < mul < unary < pow < atom.
enum Prec { kPrecCmp = 0, kPrecAdd, kPrecMul, kPrecUnary, kPrecPow, kPrecAtom };

inline int precedence(const Expr& e) {
    return std::visit(
        [](const auto& x) -> int {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Expr::Const>) {
                // A negative literal prints with a leading '-', which binds
                // like unary minus when reparsed.
                return std::signbit(x.value) ? kPrecUnary : kPrecAtom;
            } else if constexpr (std::is_same_v<T, Expr::Infix>) {
                switch (x.op) {
                    case InfixOp::Add:
                    case InfixOp::Sub: return kPrecAdd;
                    case InfixOp::Mul:
                    case InfixOp::Div: return kPrecMul;
                    case InfixOp::Pow: return kPrecPow;
                }
                return kPrecAtom;
            } else if constexpr (std::is_same_v<T, Expr::Cmp>) {
                return kPrecCmp;
            } else if constexpr (std::is_same_v<T, Expr::Neg>) {
                return kPrecUnary;
            } else {
                return kPrecAtom;
            }
        },
        e.node);
}

inline void print_rec(const Expr& e, std::string& out, int min_prec);

inline void print_child(const Expr& e, std::string& out, int min_prec) {
    if (precedence(e) < min_prec) {
        out += '(';
        print_rec(e, out, kPrecCmp);
        out += ')';
    } else {
        print_rec(e, out, kPrecCmp);
    }
}

inline void print_rec(const Expr& e, std::string& out, int) {
    std::visit(
        [&](const auto& x) {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Expr::Const>) {
                out += format_double(x.value);
            } else if constexpr (std::is_same_v<T, Expr::Ref>) {
                out += ref_name(x.kind, x.name);
            } else if constexpr (std::is_same_v<T, Expr::Neg>) {
                out += '-';
                // The operand of unary minus must bind at least as tightly as
                // unary itself; "-a ^ b" reparses as -(a^b), which is Neg(Pow).
                print_child(*x.arg, out, kPrecUnary);
            } else if constexpr (std::is_same_v<T, Expr::Infix>) {
                const char* sym = nullptr;
                int prec = 0;
                switch (x.op) {
                    case InfixOp::Add: sym = " + "; prec = kPrecAdd; break;
                    case InfixOp::Sub: sym = " - "; prec = kPrecAdd; break;
                    case InfixOp::Mul: sym = " * "; prec = kPrecMul; break;
                    case InfixOp::Div: sym = " / "; prec = kPrecMul; break;
                    case InfixOp::Pow: sym = " ^ "; prec = kPrecPow; break;
                }
                if (x.op == InfixOp::Pow) {
                    // Right-associative; left child needs parens at equal level.
                    print_child(*x.lhs, out, prec + 1);
                    out += sym;
                    print_child(*x.rhs, out, kPrecUnary);
                } else {
                    print_child(*x.lhs, out, prec);
                    out += sym;
                    print_child(*x.rhs, out, prec + 1);
                }
            } else if constexpr (std::is_same_v<T, Expr::Cmp>) {
                const char* sym = "";
                switch (x.op) {
                    case CmpOp::Lt: sym = " < "; break;
                    case CmpOp::Le: sym = " <= "; break;
                    case CmpOp::Gt: sym = " > "; break;
                    case CmpOp::Ge: sym = " >= "; break;
                    case CmpOp::Eq: sym = " == "; break;
                }
                print_child(*x.lhs, out, kPrecCmp);
                out += sym;
                print_child(*x.rhs, out, kPrecCmp + 1);
            } else {
                out += x.name;
                out += '(';
                for (std::size_t i = 0; i < x.args.size(); ++i) {
                    if (i) out += ", ";
                    print_rec(*x.args[i], out, kPrecCmp);
                }
                out += ')';
            }
        },
        e.node);
}

}  // namespace detail

inline std::string to_string(const Expr& e) {
    std::string out;
    detail::print_rec(e, out, detail::kPrecCmp);
    return out;
}

// ---------------------------------------------------------------------------
// Row layout + compiled form (postfix stack machine, used in training loops)
// ---------------------------------------------------------------------------

struct RowLayout {
    std::vector<std::string> names;  // full dotted names in storage order

    int index_of(std::string_view name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return static_cast<int>(i);
        return -1;
    }

    // s.* then a.* then sn.* — the transition row produced by rollouts.
    static RowLayout transition(const Schema& schema) {
        RowLayout layout;
        for (const auto& n : schema.state_names) layout.names.push_back("s." + n);
        for (const auto& n : schema.action_names) layout.names.push_back("a." + n);
        for (const auto& n : schema.state_names) layout.names.push_back("sn." + n);
        return layout;
    }
};

class CompiledExpr {
public:
    // Requires a validated expression; throws UnresolvedIdentifier otherwise.
    static CompiledExpr compile(const Expr& expr, const RowLayout& layout) {
        CompiledExpr c;
        int depth = 0;
        c.emit(expr, layout, depth);
        return c;
    }

    // Bit-identical to eval_step on the same row values: the postfix program
    // applies the same operations in the same order as the tree walk.
    double eval(std::span<const double> row, EvalNotes* notes = nullptr) const {
        using namespace detail;
        double small[64];
        std::vector<double> big;
        double* stack = small;
        if (max_stack_ > 64) {
            big.resize(static_cast<std::size_t>(max_stack_));
            stack = big.data();
        }
        int top = 0;
        for (const Ins& ins : code_) {
            switch (ins.op) {
                case Op::PushConst: stack[top++] = consts_[ins.idx]; break;
                case Op::PushVar: stack[top++] = row[static_cast<std::size_t>(ins.idx)]; break;
                case Op::Neg: stack[top - 1] = -stack[top - 1]; break;
                case Op::Abs: stack[top - 1] = std::fabs(stack[top - 1]); break;
                case Op::Exp: stack[top - 1] = total_exp(stack[top - 1], notes); break;
                case Op::Tanh: stack[top - 1] = std::tanh(stack[top - 1]); break;
                case Op::Sqrt: stack[top - 1] = total_sqrt(stack[top - 1]); break;
                case Op::Sign: stack[top - 1] = sign_of(stack[top - 1]); break;
                case Op::Add: --top; stack[top - 1] = finitize(stack[top - 1] + stack[top], notes); break;
                case Op::Sub: --top; stack[top - 1] = finitize(stack[top - 1] - stack[top], notes); break;
                case Op::Mul: --top; stack[top - 1] = finitize(stack[top - 1] * stack[top], notes); break;
                case Op::Div: --top; stack[top - 1] = total_div(stack[top - 1], stack[top], notes); break;
                case Op::Pow: --top; stack[top - 1] = total_pow(stack[top - 1], stack[top], notes); break;
                case Op::Min: --top; stack[top - 1] = std::min(stack[top - 1], stack[top]); break;
                case Op::Max: --top; stack[top - 1] = std::max(stack[top - 1], stack[top]); break;
                case Op::Lt: --top; stack[top - 1] = stack[top - 1] < stack[top] ? 1.0 : 0.0; break;
                case Op::Le: --top; stack[top - 1] = stack[top - 1] <= stack[top] ? 1.0 : 0.0; break;
                case Op::Gt: --top; stack[top - 1] = stack[top - 1] > stack[top] ? 1.0 : 0.0; break;
                case Op::Ge: --top; stack[top - 1] = stack[top - 1] >= stack[top] ? 1.0 : 0.0; break;
                case Op::Eq: --top; stack[top - 1] = stack[top - 1] == stack[top] ? 1.0 : 0.0; break;
                case Op::If:
                    top -= 2;
                    stack[top - 1] = stack[top - 1] != 0.0 ? stack[top] : stack[top + 1];
                    break;
                case Op::Clip:
                    top -= 2;
                    stack[top - 1] = total_clip(stack[top - 1], stack[top], stack[top + 1]);
                    break;
            }
        }
        return stack[0];
    }

private:
    enum class Op : std::uint8_t {
        PushConst, PushVar, Neg, Abs, Exp, Tanh, Sqrt, Sign,
        Add, Sub, Mul, Div, Pow, Min, Max,
        Lt, Le, Gt, Ge, Eq, If, Clip,
    };
    struct Ins {
        Op op;
        std::int32_t idx = 0;
    };

    std::vector<Ins> code_;
    std::vector<double> consts_;
    int max_stack_ = 0;

    void push_op(Op op, int& depth, int stack_delta, std::int32_t idx = 0) {
        code_.push_back({op, idx});
        depth += stack_delta;
        max_stack_ = std::max(max_stack_, depth);
    }

    void emit(const Expr& e, const RowLayout& layout, int& depth) {
        std::visit(
            [&](const auto& x) {
                using T = std::decay_t<decltype(x)>;
                if constexpr (std::is_same_v<T, Expr::Const>) {
                    consts_.push_back(x.value);
                    push_op(Op::PushConst, depth, +1, static_cast<std::int32_t>(consts_.size() - 1));
                } else if constexpr (std::is_same_v<T, Expr::Ref>) {
                    int col = layout.index_of(ref_name(x.kind, x.name));
                    if (col < 0)
                        throw UnresolvedIdentifier("cannot compile: no column '" +
                                                   ref_name(x.kind, x.name) + "' in row layout");
                    push_op(Op::PushVar, depth, +1, col);
                } else if constexpr (std::is_same_v<T, Expr::Neg>) {
                    emit(*x.arg, layout, depth);
                    push_op(Op::Neg, depth, 0);
                } else if constexpr (std::is_same_v<T, Expr::Infix>) {
                    emit(*x.lhs, layout, depth);
                    emit(*x.rhs, layout, depth);
                    switch (x.op) {
                        case InfixOp::Add: push_op(Op::Add, depth, -1); break;
                        case InfixOp::Sub: push_op(Op::Sub, depth, -1); break;
                        case InfixOp::Mul: push_op(Op::Mul, depth, -1); break;
                        case InfixOp::Div: push_op(Op::Div, depth, -1); break;
                        case InfixOp::Pow: push_op(Op::Pow, depth, -1); break;
                    }
                } else if constexpr (std::is_same_v<T, Expr::Cmp>) {
                    emit(*x.lhs, layout, depth);
                    emit(*x.rhs, layout, depth);
                    switch (x.op) {
                        case CmpOp::Lt: push_op(Op::Lt, depth, -1); break;
                        case CmpOp::Le: push_op(Op::Le, depth, -1); break;
                        case CmpOp::Gt: push_op(Op::Gt, depth, -1); break;
                        case CmpOp::Ge: push_op(Op::Ge, depth, -1); break;
                        case CmpOp::Eq: push_op(Op::Eq, depth, -1); break;
                    }
                } else {
                    for (const auto& a : x.args) emit(*a, layout, depth);
                    if (x.name == "abs") push_op(Op::Abs, depth, 0);
                    else if (x.name == "exp") push_op(Op::Exp, depth, 0);
                    else if (x.name == "tanh") push_op(Op::Tanh, depth, 0);
                    else if (x.name == "sqrt") push_op(Op::Sqrt, depth, 0);
                    else if (x.name == "sign") push_op(Op::Sign, depth, 0);
                    else if (x.name == "min") push_op(Op::Min, depth, -1);
                    else if (x.name == "max") push_op(Op::Max, depth, -1);
                    else if (x.name == "if") push_op(Op::If, depth, -2);
                    else if (x.name == "clip") push_op(Op::Clip, depth, -2);
                    else
                        throw UnresolvedIdentifier("cannot compile unknown function '" + x.name + "'");
                }
            },
            e.node);
    }
};

}  // namespace rewardlab::dsl
