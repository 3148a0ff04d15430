#include "stagelog/parser.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <vector>

namespace stagelog {

namespace {

enum class Tok : uint8_t {
    Ident,    // lowercase-initial identifier
    Var,      // uppercase- or underscore-initial identifier
    Wildcard, // bare _
    Int,
    Float,
    String,
    LParen,
    RParen,
    Comma,
    Dot,
    If, // :-
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    Plus,
    Minus,
    Star,
    Slash,
    End,
};

struct Token {
    Tok kind = Tok::End;
    std::string text;
    int64_t intValue = 0;
    double floatValue = 0.0;
    SourceSpan span;
};

class Lexer {
public:
    explicit Lexer(const std::string& text) : text_(text) {}

    Token next() {
        skipSpace();
        Token t;
        t.span = {line_, col_, 1};
        if (pos_ >= text_.size()) {
            t.kind = Tok::End;
            return t;
        }
        char c = text_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c))) return number(t);
        if (c == '_' || std::isalpha(static_cast<unsigned char>(c))) return ident(t);
        if (c == '"') return quoted(t);
        advance();
        switch (c) {
            case '(': t.kind = Tok::LParen; return t;
            case ')': t.kind = Tok::RParen; return t;
            case ',': t.kind = Tok::Comma; return t;
            case '.': t.kind = Tok::Dot; return t;
            case '+': t.kind = Tok::Plus; return t;
            case '-': t.kind = Tok::Minus; return t;
            case '*': t.kind = Tok::Star; return t;
            case '/': t.kind = Tok::Slash; return t;
            case '=': t.kind = Tok::Eq; return t;
            case '!':
                if (peek() == '=') {
                    advance();
                    t.kind = Tok::Ne;
                    t.span.length = 2;
                    return t;
                }
                throw EngineError(ErrorCode::SyntaxError, "expected '=' after '!'", t.span);
            case '<':
                if (peek() == '=') {
                    advance();
                    t.kind = Tok::Le;
                    t.span.length = 2;
                } else if (peek() == '>') {
                    advance();
                    t.kind = Tok::Ne;
                    t.span.length = 2;
                } else {
                    t.kind = Tok::Lt;
                }
                return t;
            case '>':
                if (peek() == '=') {
                    advance();
                    t.kind = Tok::Ge;
                    t.span.length = 2;
                } else {
                    t.kind = Tok::Gt;
                }
                return t;
            case ':':
                if (peek() == '-') {
                    advance();
                    t.kind = Tok::If;
                    t.span.length = 2;
                    return t;
                }
                throw EngineError(ErrorCode::SyntaxError, "expected '-' after ':'", t.span);
        }
        throw EngineError(ErrorCode::SyntaxError, std::string("unexpected character '") + c + "'",
                          t.span);
    }

private:
    char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

    void advance() {
        if (pos_ < text_.size()) {
            if (text_[pos_] == '\n') {
                ++line_;
                col_ = 1;
            } else {
                ++col_;
            }
            ++pos_;
        }
    }

    void skipSpace() {
        while (pos_ < text_.size()) {
            char c = text_[pos_];
            if (c == '%') {
                while (pos_ < text_.size() && text_[pos_] != '\n') advance();
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                advance();
            } else {
                break;
            }
        }
    }

    Token number(Token t) {
        size_t start = pos_;
        while (std::isdigit(static_cast<unsigned char>(peek()))) advance();
        bool isFloat = false;
        if (peek() == '.' && pos_ + 1 < text_.size() &&
            std::isdigit(static_cast<unsigned char>(text_[pos_ + 1]))) {
            isFloat = true;
            advance();
            while (std::isdigit(static_cast<unsigned char>(peek()))) advance();
        }
        if (peek() == 'e' || peek() == 'E') {
            size_t save = pos_;
            advance();
            if (peek() == '+' || peek() == '-') advance();
            if (std::isdigit(static_cast<unsigned char>(peek()))) {
                isFloat = true;
                while (std::isdigit(static_cast<unsigned char>(peek()))) advance();
            } else {
                pos_ = save; // 'e' starts an identifier, not an exponent
            }
        }
        std::string lexeme = text_.substr(start, pos_ - start);
        t.span.length = static_cast<int>(lexeme.size());
        t.text = lexeme;
        if (isFloat) {
            t.kind = Tok::Float;
            t.floatValue = std::strtod(lexeme.c_str(), nullptr);
        } else {
            t.kind = Tok::Int;
            auto res = std::from_chars(lexeme.data(), lexeme.data() + lexeme.size(), t.intValue);
            if (res.ec != std::errc())
                throw EngineError(ErrorCode::MalformedValue, "integer literal out of range: " + lexeme,
                                  t.span);
        }
        return t;
    }

    Token ident(Token t) {
        size_t start = pos_;
        while (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_') advance();
        t.text = text_.substr(start, pos_ - start);
        t.span.length = static_cast<int>(t.text.size());
        if (t.text == "_") {
            t.kind = Tok::Wildcard;
        } else if (std::isupper(static_cast<unsigned char>(t.text[0])) || t.text[0] == '_') {
            t.kind = Tok::Var;
        } else {
            t.kind = Tok::Ident;
        }
        return t;
    }

    Token quoted(Token t) {
        advance(); // opening quote
        std::string out;
        while (true) {
            char c = peek();
            if (c == '\0' || c == '\n')
                throw EngineError(ErrorCode::SyntaxError, "unterminated string", t.span);
            advance();
            if (c == '\\') {
                char e = peek();
                if (e == '"' || e == '\\') {
                    out += e;
                    advance();
                    continue;
                }
                out += '\\';
                continue;
            }
            if (c == '"') break;
            out += c;
        }
        t.kind = Tok::String;
        t.text = out;
        t.span.length = static_cast<int>(out.size()) + 2;
        return t;
    }

    const std::string& text_;
    size_t pos_ = 0;
    int line_ = 1;
    int col_ = 1;
};

std::optional<AggKind> aggKindFromName(const std::string& name) {
    if (name == "count") return AggKind::Count;
    if (name == "sum") return AggKind::Sum;
    if (name == "avg") return AggKind::Avg;
    if (name == "min") return AggKind::Min;
    if (name == "max") return AggKind::Max;
    return std::nullopt;
}

class Parser {
public:
    Parser(const std::string& text, std::shared_ptr<Interner> interner)
        : lexer_(text), interner_(std::move(interner)) {
        cur_ = lexer_.next();
        ahead_ = lexer_.next();
    }

    Program run() {
        Program p;
        p.interner = interner_;
        while (cur_.kind != Tok::End) p.rules.push_back(rule());
        p.indexPredicates();
        for (const Rule& r : p.rules) checkSafety(r);
        return p;
    }

private:
    void bump() {
        cur_ = ahead_;
        ahead_ = lexer_.next();
    }

    [[noreturn]] void fail(const std::string& msg) {
        throw EngineError(ErrorCode::SyntaxError, msg, cur_.span);
    }

    void expect(Tok kind, const char* what) {
        if (cur_.kind != kind) fail(std::string("expected ") + what);
        bump();
    }

    int varIndex(const std::string& name) {
        auto it = varIndex_.find(name);
        if (it != varIndex_.end()) return it->second;
        int idx = static_cast<int>(varNames_.size());
        varNames_.push_back(name);
        varIndex_.emplace(name, idx);
        return idx;
    }

    Term primary() {
        switch (cur_.kind) {
            case Tok::Int: {
                Term t = Term::constantOf(Value::makeInt(cur_.intValue));
                bump();
                return t;
            }
            case Tok::Float: {
                Term t = Term::constantOf(Value::makeFloat(cur_.floatValue));
                bump();
                return t;
            }
            case Tok::String: {
                Term t = Term::constantOf(Value::makeSymbol(interner_->intern(cur_.text)));
                bump();
                return t;
            }
            case Tok::Ident: {
                Term t = Term::constantOf(Value::makeSymbol(interner_->intern(cur_.text)));
                bump();
                return t;
            }
            case Tok::Var: {
                Term t = Term::variable(varIndex(cur_.text));
                bump();
                return t;
            }
            case Tok::Wildcard: {
                bump();
                return Term::wildcard();
            }
            case Tok::Minus: {
                bump();
                Term inner = primary();
                if (inner.isConstant() && inner.constant.kind() == ValueKind::Int)
                    return Term::constantOf(Value::makeInt(-inner.constant.asInt()));
                if (inner.isConstant() && inner.constant.kind() == ValueKind::Float)
                    return Term::constantOf(Value::makeFloat(-inner.constant.asFloat()));
                return Term::arithOf(ArithOp::Sub, Term::constantOf(Value::makeInt(0)),
                                     std::move(inner));
            }
            case Tok::LParen: {
                bump();
                Term t = term();
                expect(Tok::RParen, "')'");
                return t;
            }
            default: fail("expected a term");
        }
    }

    Term multiplicative() {
        Term t = primary();
        while (cur_.kind == Tok::Star || cur_.kind == Tok::Slash) {
            ArithOp op = cur_.kind == Tok::Star ? ArithOp::Mul : ArithOp::Div;
            bump();
            t = Term::arithOf(op, std::move(t), primary());
        }
        return t;
    }

    Term term() {
        Term t = multiplicative();
        while (cur_.kind == Tok::Plus || cur_.kind == Tok::Minus) {
            ArithOp op = cur_.kind == Tok::Plus ? ArithOp::Add : ArithOp::Sub;
            bump();
            t = Term::arithOf(op, std::move(t), multiplicative());
        }
        return t;
    }

    Atom atomAfterName(std::string pred, SourceSpan span) {
        Atom a;
        a.pred = std::move(pred);
        a.span = span;
        expect(Tok::LParen, "'('");
        a.args.push_back(term());
        while (cur_.kind == Tok::Comma) {
            bump();
            a.args.push_back(term());
        }
        expect(Tok::RParen, "')'");
        return a;
    }

    Head head() {
        if (cur_.kind != Tok::Ident) fail("expected a predicate name");
        Head h;
        h.atom.pred = cur_.text;
        h.atom.span = cur_.span;
        bump();
        expect(Tok::LParen, "'('");
        while (true) {
            // aggregate argument: kind '<' Var '>'
            auto agg = cur_.kind == Tok::Ident ? aggKindFromName(cur_.text) : std::nullopt;
            if (agg && ahead_.kind == Tok::Lt) {
                if (h.agg) fail("a head may contain only one aggregate");
                SourceSpan span = cur_.span;
                bump(); // kind
                bump(); // <
                if (cur_.kind != Tok::Var)
                    throw EngineError(ErrorCode::SyntaxError, "expected a variable in aggregate",
                                      cur_.span);
                int v = varIndex(cur_.text);
                bump();
                expect(Tok::Gt, "'>'");
                h.agg = AggSpec{h.atom.args.size(), *agg, v};
                h.atom.args.push_back(Term::variable(v));
                (void)span;
            } else {
                h.atom.args.push_back(term());
            }
            if (cur_.kind == Tok::Comma) {
                bump();
                continue;
            }
            break;
        }
        expect(Tok::RParen, "')'");
        return h;
    }

    Literal literal() {
        if (cur_.kind == Tok::Ident && cur_.text == "not") {
            bump();
            if (cur_.kind != Tok::Ident) fail("expected an atom after 'not'");
            std::string pred = cur_.text;
            SourceSpan span = cur_.span;
            bump();
            return Literal::negated(atomAfterName(std::move(pred), span));
        }
        if (cur_.kind == Tok::Ident && (cur_.text == "encd" || cur_.text == "decd") &&
            ahead_.kind == Tok::LParen) {
            BuiltinCall b;
            b.kind = cur_.text == "encd" ? BuiltinKind::Encd : BuiltinKind::Decd;
            b.span = cur_.span;
            bump();
            bump(); // (
            b.args[0] = term();
            expect(Tok::Comma, "','");
            b.args[1] = term();
            expect(Tok::Comma, "','");
            b.args[2] = term();
            expect(Tok::RParen, "')'");
            return Literal::builtinCall(b);
        }
        if (cur_.kind == Tok::Ident && ahead_.kind == Tok::LParen) {
            std::string pred = cur_.text;
            SourceSpan span = cur_.span;
            bump();
            return Literal::positive(atomAfterName(std::move(pred), span));
        }
        // comparison
        Comparison c;
        c.span = cur_.span;
        c.lhs = term();
        switch (cur_.kind) {
            case Tok::Eq: c.op = CmpOp::Eq; break;
            case Tok::Ne: c.op = CmpOp::Ne; break;
            case Tok::Lt: c.op = CmpOp::Lt; break;
            case Tok::Le: c.op = CmpOp::Le; break;
            case Tok::Gt: c.op = CmpOp::Gt; break;
            case Tok::Ge: c.op = CmpOp::Ge; break;
            default: fail("expected a comparison operator");
        }
        bump();
        c.rhs = term();
        return Literal::comparison(c);
    }

    Rule rule() {
        varNames_.clear();
        varIndex_.clear();
        Rule r;
        r.span = cur_.span;
        r.head = head();
        if (cur_.kind == Tok::If) {
            bump();
            r.body.push_back(literal());
            while (cur_.kind == Tok::Comma) {
                bump();
                r.body.push_back(literal());
            }
        }
        expect(Tok::Dot, "'.'");
        r.varNames = varNames_;
        return r;
    }

    // ---- safety ----------------------------------------------------------

    static void collectTermVars(const Term& t, std::set<int>& out) { t.collectVars(out); }

    static bool evaluableWith(const Term& t, const std::vector<char>& bound) {
        switch (t.kind) {
            case Term::Kind::Constant: return true;
            case Term::Kind::Variable: return bound[t.var];
            case Term::Kind::Wildcard: return false;
            case Term::Kind::Arith:
                return evaluableWith(*t.lhs, bound) && evaluableWith(*t.rhs, bound);
        }
        return false;
    }

    void checkSafety(const Rule& r) {
        std::vector<char> bound(r.varNames.size(), 0);
        // positive atoms bind their plain variable arguments; everything else
        // propagates to a fixpoint
        bool changed = true;
        while (changed) {
            changed = false;
            auto mark = [&](const Term& t) {
                if (t.isVariable() && !bound[t.var]) {
                    bound[t.var] = 1;
                    changed = true;
                }
            };
            for (const Literal& l : r.body) {
                switch (l.kind) {
                    case Literal::Kind::Atom:
                        for (const Term& a : l.atom.args) mark(a);
                        break;
                    case Literal::Kind::Comparison:
                        if (l.cmp.op == CmpOp::Eq) {
                            if (l.cmp.lhs.isVariable() && evaluableWith(l.cmp.rhs, bound))
                                mark(l.cmp.lhs);
                            if (l.cmp.rhs.isVariable() && evaluableWith(l.cmp.lhs, bound))
                                mark(l.cmp.rhs);
                        }
                        break;
                    case Literal::Kind::Builtin: {
                        const auto& args = l.builtin.args;
                        if (l.builtin.kind == BuiltinKind::Encd) {
                            if (evaluableWith(args[0], bound) && evaluableWith(args[1], bound))
                                mark(args[2]);
                        } else {
                            if (evaluableWith(args[0], bound)) {
                                mark(args[1]);
                                mark(args[2]);
                            }
                        }
                        break;
                    }
                    default: break;
                }
            }
        }
        std::set<int> occurring;
        for (const Term& t : r.head.atom.args) t.collectVars(occurring);
        for (const Literal& l : r.body) {
            switch (l.kind) {
                case Literal::Kind::Atom:
                case Literal::Kind::NegatedAtom:
                    for (const Term& t : l.atom.args) t.collectVars(occurring);
                    break;
                case Literal::Kind::Comparison:
                    l.cmp.lhs.collectVars(occurring);
                    l.cmp.rhs.collectVars(occurring);
                    break;
                case Literal::Kind::Builtin:
                    for (const Term& t : l.builtin.args) t.collectVars(occurring);
                    break;
            }
        }
        for (int v : occurring) {
            if (!bound[v])
                throw EngineError(ErrorCode::SafetyViolation,
                                  "variable " + r.varNames[v] + " in rule '" + r.toString() +
                                      "' is not bound by a positive body atom",
                                  r.span);
        }
        // wildcards may appear only where nothing must be evaluated
        auto noWildcard = [&](const Term& t, const char* where) {
            if (t.kind == Term::Kind::Wildcard)
                throw EngineError(ErrorCode::SafetyViolation,
                                  std::string("wildcard not allowed in ") + where, r.span);
            if (t.kind == Term::Kind::Arith) {
                // arith over wildcards is rejected by evaluableWith at runtime;
                // catch it here for a better message
                std::function<bool(const Term&)> hasWild = [&](const Term& x) {
                    if (x.kind == Term::Kind::Wildcard) return true;
                    if (x.kind == Term::Kind::Arith) return hasWild(*x.lhs) || hasWild(*x.rhs);
                    return false;
                };
                if (hasWild(t))
                    throw EngineError(ErrorCode::SafetyViolation,
                                      std::string("wildcard not allowed in ") + where, r.span);
            }
        };
        for (const Term& t : r.head.atom.args) noWildcard(t, "a rule head");
        for (const Literal& l : r.body) {
            if (l.kind == Literal::Kind::Comparison) {
                noWildcard(l.cmp.lhs, "a comparison");
                noWildcard(l.cmp.rhs, "a comparison");
            } else if (l.kind == Literal::Kind::Builtin) {
                if (l.builtin.kind == BuiltinKind::Encd) {
                    noWildcard(l.builtin.args[0], "an encd input");
                    noWildcard(l.builtin.args[1], "an encd input");
                } else {
                    noWildcard(l.builtin.args[0], "a decd input");
                }
            }
        }
        if (r.head.agg) {
            for (size_t i = 0; i < r.head.atom.args.size(); ++i) {
                if (i == r.head.agg->position) continue;
                std::set<int> vars;
                r.head.atom.args[i].collectVars(vars);
                if (vars.count(r.head.agg->var))
                    throw EngineError(ErrorCode::SafetyViolation,
                                      "aggregated variable " + r.varNames[r.head.agg->var] +
                                          " also appears in the group key",
                                      r.span);
            }
        }
    }

    Lexer lexer_;
    std::shared_ptr<Interner> interner_;
    Token cur_, ahead_;
    std::vector<std::string> varNames_;
    std::map<std::string, int> varIndex_;
};

Value parseFieldValue(const std::string& raw, bool quoted, Interner& interner, SourceSpan span) {
    if (quoted) return Value::makeSymbol(interner.intern(raw));
    if (raw.empty()) throw EngineError(ErrorCode::MalformedValue, "empty field", span);
    const char* s = raw.c_str();
    char* end = nullptr;
    bool looksNumeric = raw[0] == '-' || raw[0] == '+' || std::isdigit(static_cast<unsigned char>(raw[0]));
    if (looksNumeric) {
        bool isFloat = raw.find('.') != std::string::npos || raw.find('e') != std::string::npos ||
                       raw.find('E') != std::string::npos;
        if (isFloat) {
            double d = std::strtod(s, &end);
            if (end && *end == '\0') return Value::makeFloat(d);
        } else {
            errno = 0;
            long long v = std::strtoll(s, &end, 10);
            if (end && *end == '\0' && errno == 0) return Value::makeInt(v);
            if (errno == ERANGE)
                throw EngineError(ErrorCode::MalformedValue, "integer out of range: " + raw, span);
        }
        throw EngineError(ErrorCode::MalformedValue, "malformed number: " + raw, span);
    }
    return Value::makeSymbol(interner.intern(raw));
}

} // namespace

Program parseProgram(const std::string& text, std::shared_ptr<Interner> interner) {
    if (!interner) interner = std::make_shared<Interner>();
    Parser p(text, interner);
    return p.run();
}

FactSet parseFactFile(const std::string& text, const std::map<std::string, size_t>& schema,
                      Interner& interner) {
    FactSet out;
    std::istringstream in(text);
    std::string line;
    int lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        size_t firstNonSpace = line.find_first_not_of(" \t");
        if (firstNonSpace == std::string::npos) continue;
        if (line[firstNonSpace] == '#') continue;
        SourceSpan span{lineNo, 1, static_cast<int>(line.size())};

        // split on commas with double-quote quoting ("" escapes a quote)
        std::vector<std::pair<std::string, bool>> fields;
        std::string cur;
        bool quoted = false;
        bool inQuotes = false;
        for (size_t i = 0; i <= line.size(); ++i) {
            char c = i < line.size() ? line[i] : ',';
            if (inQuotes) {
                if (c == '"') {
                    if (i + 1 < line.size() && line[i + 1] == '"') {
                        cur += '"';
                        ++i;
                    } else {
                        inQuotes = false;
                    }
                } else if (i == line.size()) {
                    throw EngineError(ErrorCode::MalformedValue, "unterminated quote", span);
                } else {
                    cur += c;
                }
                continue;
            }
            if (c == '"' && cur.empty()) {
                inQuotes = true;
                quoted = true;
                continue;
            }
            if (c == ',') {
                if (!quoted) { // trim unquoted fields
                    size_t b = cur.find_first_not_of(" \t");
                    size_t e = cur.find_last_not_of(" \t");
                    cur = b == std::string::npos ? "" : cur.substr(b, e - b + 1);
                }
                fields.emplace_back(cur, quoted);
                cur.clear();
                quoted = false;
                continue;
            }
            cur += c;
        }
        if (fields.empty() || fields[0].first.empty())
            throw EngineError(ErrorCode::MalformedValue, "missing predicate name", span);
        const std::string& pred = fields[0].first;
        auto it = schema.find(pred);
        if (it == schema.end())
            throw EngineError(ErrorCode::UnknownPredicate,
                              pred + " is not an input predicate of this program", span);
        if (fields.size() - 1 != it->second)
            throw EngineError(ErrorCode::ArityMismatch,
                              pred + " expects " + std::to_string(it->second) + " fields, got " +
                                  std::to_string(fields.size() - 1),
                              span);
        Tuple t;
        t.reserve(fields.size() - 1);
        for (size_t i = 1; i < fields.size(); ++i)
            t.push_back(parseFieldValue(fields[i].first, fields[i].second, interner, span));
        out.insert(pred, std::move(t));
    }
    return out;
}

FactSet parseFactsRelation(const std::string& text, const std::string& pred,
                           const std::map<std::string, size_t>& schema, Interner& interner) {
    auto it = schema.find(pred);
    if (it == schema.end())
        throw EngineError(ErrorCode::UnknownPredicate,
                          pred + " is not an input predicate of this program");
    FactSet out;
    std::istringstream in(text);
    std::string line;
    int lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        SourceSpan span{lineNo, 1, static_cast<int>(line.size())};
        std::istringstream ls(line);
        std::vector<std::string> fields;
        std::string f;
        while (ls >> f) fields.push_back(f);
        if (fields.empty()) continue;
        if (fields[0][0] == '#') continue;
        if (fields.size() != it->second)
            throw EngineError(ErrorCode::ArityMismatch,
                              pred + " expects " + std::to_string(it->second) + " fields, got " +
                                  std::to_string(fields.size()),
                              span);
        Tuple t;
        for (const std::string& field : fields)
            t.push_back(parseFieldValue(field, false, interner, span));
        out.insert(pred, std::move(t));
    }
    return out;
}

} // namespace stagelog
