#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "stagelog/value.hpp"

namespace stagelog {

/// A term in a rule: variable (index into the rule's variable table),
/// constant, anonymous wildcard, or arithmetic over sub-terms. Immutable;
/// arithmetic children are shared so terms copy cheaply.
struct Term {
    enum class Kind : uint8_t { Variable, Constant, Wildcard, Arith };

    Kind kind = Kind::Wildcard;
    int var = -1;           // Kind::Variable
    Value constant;         // Kind::Constant
    ArithOp op = ArithOp::Add;
    std::shared_ptr<const Term> lhs, rhs; // Kind::Arith

    static Term variable(int index) {
        Term t;
        t.kind = Kind::Variable;
        t.var = index;
        return t;
    }
    static Term constantOf(Value v) {
        Term t;
        t.kind = Kind::Constant;
        t.constant = std::move(v);
        return t;
    }
    static Term wildcard() { return Term{}; }
    static Term arithOf(ArithOp op, Term a, Term b) {
        Term t;
        t.kind = Kind::Arith;
        t.op = op;
        t.lhs = std::make_shared<const Term>(std::move(a));
        t.rhs = std::make_shared<const Term>(std::move(b));
        return t;
    }

    bool isVariable() const { return kind == Kind::Variable; }
    bool isConstant() const { return kind == Kind::Constant; }

    /// Collects variable indices into `out`.
    void collectVars(std::set<int>& out) const;
};

struct Atom {
    std::string pred;
    std::vector<Term> args;
    SourceSpan span;
};

enum class AggKind : uint8_t { Count, Sum, Avg, Min, Max };

const char* aggKindName(AggKind k);

/// Marks one head argument position as an aggregate over a body variable.
struct AggSpec {
    size_t position = 0;
    AggKind kind = AggKind::Count;
    int var = -1; // aggregated variable; head.args[position] is Variable(var)
};

struct Head {
    Atom atom;
    std::optional<AggSpec> agg;

    bool isAggregate() const { return agg.has_value(); }
};

struct Comparison {
    CmpOp op = CmpOp::Eq;
    Term lhs, rhs;
    SourceSpan span;
};

enum class BuiltinKind : uint8_t { Encd, Decd };

/// encd(A, B, P): P = pair(A, B).  decd(P, A, B): destructure P.
struct BuiltinCall {
    BuiltinKind kind = BuiltinKind::Encd;
    std::array<Term, 3> args;
    SourceSpan span;
};

struct Literal {
    enum class Kind : uint8_t { Atom, NegatedAtom, Comparison, Builtin };

    Kind kind = Kind::Atom;
    Atom atom;          // Atom / NegatedAtom
    Comparison cmp;     // Comparison
    BuiltinCall builtin; // Builtin

    static Literal positive(Atom a) {
        Literal l;
        l.kind = Kind::Atom;
        l.atom = std::move(a);
        return l;
    }
    static Literal negated(Atom a) {
        Literal l;
        l.kind = Kind::NegatedAtom;
        l.atom = std::move(a);
        return l;
    }
    static Literal comparison(Comparison c) {
        Literal l;
        l.kind = Kind::Comparison;
        l.cmp = std::move(c);
        return l;
    }
    static Literal builtinCall(BuiltinCall b) {
        Literal l;
        l.kind = Kind::Builtin;
        l.builtin = std::move(b);
        return l;
    }
};

struct Rule {
    Head head;
    std::vector<Literal> body;
    std::vector<std::string> varNames; // variable index -> name
    SourceSpan span;

    std::string toString() const;
};

/// Parsed program. EDB predicates are those that occur only in rule bodies;
/// their arity schema is inferred from use.
struct Program {
    std::vector<Rule> rules;
    std::shared_ptr<Interner> interner;
    std::map<std::string, size_t> arities;     // every predicate -> arity
    std::map<std::string, size_t> edbSchemas;  // body-only predicates
    std::set<std::string> idbPreds;            // head predicates

    /// Rewrite metadata: rule index -> guard-count predicate (set by
    /// stratifiedRewrite; empty for parsed programs).
    std::map<size_t, std::string> aggregateGuards;

    void indexPredicates(); // recomputes arities/edbSchemas/idbPreds
    std::string toString() const;
};

std::string termToString(const Term& t, const std::vector<std::string>& varNames);
std::string atomToString(const Atom& a, const std::vector<std::string>& varNames);
std::string headToString(const Head& h, const std::vector<std::string>& varNames);

/// Structural equality (used by the parse/print round-trip property).
bool termEquals(const Term& a, const Term& b);
bool ruleEquals(const Rule& a, const Rule& b);
bool programEquals(const Program& a, const Program& b);

/// Binding environment: per-rule variable slots.
class Binding {
public:
    explicit Binding(size_t varCount) : slots_(varCount), bound_(varCount, false) {}

    bool isBound(int var) const { return bound_[var]; }
    const Value& get(int var) const { return slots_[var]; }
    void set(int var, Value v) {
        slots_[var] = std::move(v);
        bound_[var] = true;
    }
    void unset(int var) { bound_[var] = false; }
    size_t size() const { return slots_.size(); }

private:
    std::vector<Value> slots_;
    std::vector<char> bound_;
};

/// Evaluates a ground-instantiable term under a binding. Throws
/// UnboundVariable if a variable (or wildcard) has no value.
Value evalTerm(const Term& t, const Binding& binding, const std::vector<std::string>& varNames);

/// True if every variable of t is bound (wildcards are never evaluable).
bool termEvaluable(const Term& t, const Binding& binding);

} // namespace stagelog
