#include "stagelog/ast.hpp"

#include <sstream>

namespace stagelog {

void Term::collectVars(std::set<int>& out) const {
    switch (kind) {
        case Kind::Variable: out.insert(var); break;
        case Kind::Arith:
            lhs->collectVars(out);
            rhs->collectVars(out);
            break;
        default: break;
    }
}

const char* aggKindName(AggKind k) {
    switch (k) {
        case AggKind::Count: return "count";
        case AggKind::Sum: return "sum";
        case AggKind::Avg: return "avg";
        case AggKind::Min: return "min";
        case AggKind::Max: return "max";
    }
    return "?";
}

namespace {

bool needsQuotes(const std::string& s) {
    if (s.empty()) return true;
    if (!(s[0] >= 'a' && s[0] <= 'z')) return true;
    for (char c : s)
        if (!((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_'))
            return true;
    return false;
}

std::string constantToString(const Value& v) {
    if (v.kind() == ValueKind::Symbol) {
        const std::string& s = v.asSymbol();
        if (needsQuotes(s)) {
            std::string out = "\"";
            for (char c : s) {
                if (c == '"' || c == '\\') out += '\\';
                out += c;
            }
            return out + "\"";
        }
        return s;
    }
    return v.toString();
}

int precedence(ArithOp op) { return (op == ArithOp::Add || op == ArithOp::Sub) ? 1 : 2; }

void termToStream(std::ostringstream& os, const Term& t, const std::vector<std::string>& vars,
                  int parentPrec) {
    switch (t.kind) {
        case Term::Kind::Variable: os << vars[t.var]; break;
        case Term::Kind::Constant: os << constantToString(t.constant); break;
        case Term::Kind::Wildcard: os << "_"; break;
        case Term::Kind::Arith: {
            int prec = precedence(t.op);
            if (prec < parentPrec) os << "(";
            termToStream(os, *t.lhs, vars, prec);
            os << " " << static_cast<char>(t.op) << " ";
            // right side needs a tighter context for -, / (left-associative print)
            termToStream(os, *t.rhs, vars, prec + 1);
            if (prec < parentPrec) os << ")";
            break;
        }
    }
}

} // namespace

std::string termToString(const Term& t, const std::vector<std::string>& varNames) {
    std::ostringstream os;
    termToStream(os, t, varNames, 0);
    return os.str();
}

std::string atomToString(const Atom& a, const std::vector<std::string>& varNames) {
    std::ostringstream os;
    os << a.pred << "(";
    for (size_t i = 0; i < a.args.size(); ++i) {
        if (i) os << ", ";
        os << termToString(a.args[i], varNames);
    }
    os << ")";
    return os.str();
}

std::string headToString(const Head& h, const std::vector<std::string>& varNames) {
    std::ostringstream os;
    os << h.atom.pred << "(";
    for (size_t i = 0; i < h.atom.args.size(); ++i) {
        if (i) os << ", ";
        if (h.agg && h.agg->position == i)
            os << aggKindName(h.agg->kind) << "<" << varNames[h.agg->var] << ">";
        else
            os << termToString(h.atom.args[i], varNames);
    }
    os << ")";
    return os.str();
}

std::string Rule::toString() const {
    std::ostringstream os;
    os << headToString(head, varNames);
    if (!body.empty()) {
        os << " :- ";
        for (size_t i = 0; i < body.size(); ++i) {
            if (i) os << ", ";
            const Literal& l = body[i];
            switch (l.kind) {
                case Literal::Kind::Atom: os << atomToString(l.atom, varNames); break;
                case Literal::Kind::NegatedAtom:
                    os << "not " << atomToString(l.atom, varNames);
                    break;
                case Literal::Kind::Comparison:
                    os << termToString(l.cmp.lhs, varNames) << " " << cmpOpName(l.cmp.op) << " "
                       << termToString(l.cmp.rhs, varNames);
                    break;
                case Literal::Kind::Builtin:
                    os << (l.builtin.kind == BuiltinKind::Encd ? "encd" : "decd") << "(";
                    for (size_t j = 0; j < 3; ++j) {
                        if (j) os << ", ";
                        os << termToString(l.builtin.args[j], varNames);
                    }
                    os << ")";
                    break;
            }
        }
    }
    os << ".";
    return os.str();
}

void Program::indexPredicates() {
    arities.clear();
    edbSchemas.clear();
    idbPreds.clear();
    auto note = [&](const std::string& pred, size_t arity, const SourceSpan& span) {
        auto [it, inserted] = arities.emplace(pred, arity);
        if (!inserted && it->second != arity)
            throw EngineError(ErrorCode::ArityMismatch,
                              "predicate " + pred + " used with arity " + std::to_string(arity) +
                                  " and " + std::to_string(it->second),
                              span);
    };
    for (const Rule& r : rules) {
        note(r.head.atom.pred, r.head.atom.args.size(), r.head.atom.span);
        idbPreds.insert(r.head.atom.pred);
        for (const Literal& l : r.body)
            if (l.kind == Literal::Kind::Atom || l.kind == Literal::Kind::NegatedAtom)
                note(l.atom.pred, l.atom.args.size(), l.atom.span);
    }
    for (const auto& [pred, arity] : arities)
        if (!idbPreds.count(pred)) edbSchemas.emplace(pred, arity);
}

std::string Program::toString() const {
    std::string out;
    for (const Rule& r : rules) {
        out += r.toString();
        out += "\n";
    }
    return out;
}

bool termEquals(const Term& a, const Term& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
        case Term::Kind::Variable: return a.var == b.var;
        case Term::Kind::Constant: return a.constant == b.constant;
        case Term::Kind::Wildcard: return true;
        case Term::Kind::Arith:
            return a.op == b.op && termEquals(*a.lhs, *b.lhs) && termEquals(*a.rhs, *b.rhs);
    }
    return false;
}

namespace {

bool atomEquals(const Atom& a, const Atom& b) {
    if (a.pred != b.pred || a.args.size() != b.args.size()) return false;
    for (size_t i = 0; i < a.args.size(); ++i)
        if (!termEquals(a.args[i], b.args[i])) return false;
    return true;
}

} // namespace

bool ruleEquals(const Rule& a, const Rule& b) {
    if (a.varNames != b.varNames) return false;
    if (!atomEquals(a.head.atom, b.head.atom)) return false;
    if (a.head.agg.has_value() != b.head.agg.has_value()) return false;
    if (a.head.agg &&
        (a.head.agg->position != b.head.agg->position || a.head.agg->kind != b.head.agg->kind ||
         a.head.agg->var != b.head.agg->var))
        return false;
    if (a.body.size() != b.body.size()) return false;
    for (size_t i = 0; i < a.body.size(); ++i) {
        const Literal& x = a.body[i];
        const Literal& y = b.body[i];
        if (x.kind != y.kind) return false;
        switch (x.kind) {
            case Literal::Kind::Atom:
            case Literal::Kind::NegatedAtom:
                if (!atomEquals(x.atom, y.atom)) return false;
                break;
            case Literal::Kind::Comparison:
                if (x.cmp.op != y.cmp.op || !termEquals(x.cmp.lhs, y.cmp.lhs) ||
                    !termEquals(x.cmp.rhs, y.cmp.rhs))
                    return false;
                break;
            case Literal::Kind::Builtin:
                if (x.builtin.kind != y.builtin.kind) return false;
                for (size_t j = 0; j < 3; ++j)
                    if (!termEquals(x.builtin.args[j], y.builtin.args[j])) return false;
                break;
        }
    }
    return true;
}

bool programEquals(const Program& a, const Program& b) {
    if (a.rules.size() != b.rules.size()) return false;
    for (size_t i = 0; i < a.rules.size(); ++i)
        if (!ruleEquals(a.rules[i], b.rules[i])) return false;
    return true;
}

Value evalTerm(const Term& t, const Binding& binding, const std::vector<std::string>& varNames) {
    switch (t.kind) {
        case Term::Kind::Constant: return t.constant;
        case Term::Kind::Variable:
            if (!binding.isBound(t.var))
                throw EngineError(ErrorCode::UnboundVariable,
                                  t.var < static_cast<int>(varNames.size()) ? varNames[t.var]
                                                                            : "?");
            return binding.get(t.var);
        case Term::Kind::Wildcard:
            throw EngineError(ErrorCode::UnboundVariable, "wildcard in evaluable position");
        case Term::Kind::Arith:
            return arith(t.op, evalTerm(*t.lhs, binding, varNames),
                         evalTerm(*t.rhs, binding, varNames));
    }
    throw EngineError(ErrorCode::UnboundVariable, "malformed term");
}

bool termEvaluable(const Term& t, const Binding& binding) {
    switch (t.kind) {
        case Term::Kind::Constant: return true;
        case Term::Kind::Variable: return binding.isBound(t.var);
        case Term::Kind::Wildcard: return false;
        case Term::Kind::Arith:
            return termEvaluable(*t.lhs, binding) && termEvaluable(*t.rhs, binding);
    }
    return false;
}

} // namespace stagelog
