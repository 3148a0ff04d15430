#include "stagelog/value.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <functional>

namespace stagelog {

SymbolRef Interner::intern(std::string_view text) {
    std::string key(text);
    auto it = pool_.find(key);
    if (it != pool_.end()) return it->second;
    auto ref = std::make_shared<const std::string>(key);
    pool_.emplace(std::move(key), ref);
    return ref;
}

const char* valueKindName(ValueKind kind) {
    switch (kind) {
        case ValueKind::Int: return "int";
        case ValueKind::Float: return "float";
        case ValueKind::Symbol: return "symbol";
        case ValueKind::Pair: return "pair";
    }
    return "?";
}

const char* errorCodeName(ErrorCode code) {
    switch (code) {
        case ErrorCode::SyntaxError: return "syntax error";
        case ErrorCode::SafetyViolation: return "safety violation";
        case ErrorCode::ArityMismatch: return "arity mismatch";
        case ErrorCode::UnknownPredicate: return "unknown predicate";
        case ErrorCode::MalformedValue: return "malformed value";
        case ErrorCode::NotStratifiable: return "not stratifiable";
        case ErrorCode::TypeMismatch: return "type mismatch";
        case ErrorCode::UnboundVariable: return "unbound variable";
        case ErrorCode::DivisionByZero: return "division by zero";
        case ErrorCode::IntegerOverflow: return "integer overflow";
        case ErrorCode::EmptyGroup: return "empty group";
        case ErrorCode::CardinalityMismatch: return "cardinality mismatch";
        case ErrorCode::SizeLimit: return "size limit";
        case ErrorCode::NonStochasticRow: return "non-stochastic row";
    }
    return "error";
}

const char* cmpOpName(CmpOp op) {
    switch (op) {
        case CmpOp::Eq: return "=";
        case CmpOp::Ne: return "!=";
        case CmpOp::Lt: return "<";
        case CmpOp::Le: return "<=";
        case CmpOp::Gt: return ">";
        case CmpOp::Ge: return ">=";
    }
    return "?";
}

bool Value::operator==(const Value& other) const {
    if (kind() != other.kind()) return false;
    switch (kind()) {
        case ValueKind::Int: return asInt() == other.asInt();
        case ValueKind::Float: return asFloat() == other.asFloat();
        case ValueKind::Symbol: {
            const SymbolRef& a = std::get<SymbolRef>(repr_);
            const SymbolRef& b = std::get<SymbolRef>(other.repr_);
            return a == b || *a == *b;
        }
        case ValueKind::Pair: {
            const auto& a = asPair();
            const auto& b = other.asPair();
            return a.first == b.first && a.second == b.second;
        }
    }
    return false;
}

size_t Value::hash() const {
    auto mix = [](size_t seed, size_t h) {
        return seed ^ (h + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
    };
    switch (kind()) {
        case ValueKind::Int: return mix(1, std::hash<int64_t>{}(asInt()));
        case ValueKind::Float: {
            double d = asFloat();
            // normalize -0.0 so equal floats hash equally
            if (d == 0.0) d = 0.0;
            return mix(2, std::hash<double>{}(d));
        }
        case ValueKind::Symbol: return mix(3, std::hash<std::string>{}(asSymbol()));
        case ValueKind::Pair: {
            const auto& p = asPair();
            return mix(mix(4, p.first.hash()), p.second.hash());
        }
    }
    return 0;
}

std::string formatFloat(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string Value::toString() const {
    switch (kind()) {
        case ValueKind::Int: {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%" PRId64, asInt());
            return buf;
        }
        case ValueKind::Float: return formatFloat(asFloat());
        case ValueKind::Symbol: return asSymbol();
        case ValueKind::Pair:
            return "(" + asPair().first.toString() + "," + asPair().second.toString() + ")";
    }
    return "?";
}

namespace {

int numericRank(ValueKind k) {
    switch (k) {
        case ValueKind::Int:
        case ValueKind::Float: return 0;
        case ValueKind::Symbol: return 1;
        case ValueKind::Pair: return 2;
    }
    return 3;
}

} // namespace

bool storageLess(const Value& a, const Value& b) {
    int ra = numericRank(a.kind());
    int rb = numericRank(b.kind());
    if (ra != rb) return ra < rb;
    switch (ra) {
        case 0: {
            long double x = a.widened();
            long double y = b.widened();
            if (x != y) return x < y;
            return a.kind() < b.kind(); // Int before Float on numeric ties
        }
        case 1: return a.asSymbol() < b.asSymbol();
        default: {
            const auto& pa = a.asPair();
            const auto& pb = b.asPair();
            if (pa.first != pb.first) return storageLess(pa.first, pb.first);
            return storageLess(pa.second, pb.second);
        }
    }
}

bool compareValues(CmpOp op, const Value& a, const Value& b) {
    if (a.isNumeric() && b.isNumeric()) {
        long double x = a.widened();
        long double y = b.widened();
        switch (op) {
            case CmpOp::Eq: return x == y;
            case CmpOp::Ne: return x != y;
            case CmpOp::Lt: return x < y;
            case CmpOp::Le: return x <= y;
            case CmpOp::Gt: return x > y;
            case CmpOp::Ge: return x >= y;
        }
    }
    if (a.kind() == ValueKind::Symbol && b.kind() == ValueKind::Symbol) {
        const std::string& x = a.asSymbol();
        const std::string& y = b.asSymbol();
        switch (op) {
            case CmpOp::Eq: return x == y;
            case CmpOp::Ne: return x != y;
            case CmpOp::Lt: return x < y;
            case CmpOp::Le: return x <= y;
            case CmpOp::Gt: return x > y;
            case CmpOp::Ge: return x >= y;
        }
    }
    if (a.kind() == ValueKind::Pair && b.kind() == ValueKind::Pair) {
        const auto& pa = a.asPair();
        const auto& pb = b.asPair();
        switch (op) {
            case CmpOp::Eq: return a == b;
            case CmpOp::Ne: return !(a == b);
            default: break;
        }
        if (!(pa.first == pb.first)) return compareValues(op, pa.first, pb.first);
        // first components equal: strictness decided by the second
        return compareValues(op, pa.second, pb.second);
    }
    throw EngineError(ErrorCode::TypeMismatch,
                      std::string("cannot compare ") + valueKindName(a.kind()) + " " +
                          cmpOpName(op) + " " + valueKindName(b.kind()));
}

namespace {

int64_t checkedAdd(int64_t a, int64_t b) {
    int64_t out;
    if (__builtin_add_overflow(a, b, &out))
        throw EngineError(ErrorCode::IntegerOverflow,
                          std::to_string(a) + " + " + std::to_string(b));
    return out;
}

int64_t checkedSub(int64_t a, int64_t b) {
    int64_t out;
    if (__builtin_sub_overflow(a, b, &out))
        throw EngineError(ErrorCode::IntegerOverflow,
                          std::to_string(a) + " - " + std::to_string(b));
    return out;
}

int64_t checkedMul(int64_t a, int64_t b) {
    int64_t out;
    if (__builtin_mul_overflow(a, b, &out))
        throw EngineError(ErrorCode::IntegerOverflow,
                          std::to_string(a) + " * " + std::to_string(b));
    return out;
}

} // namespace

Value arith(ArithOp op, const Value& a, const Value& b) {
    if (!a.isNumeric() || !b.isNumeric())
        throw EngineError(ErrorCode::TypeMismatch,
                          std::string("arithmetic on ") + valueKindName(a.kind()) + " and " +
                              valueKindName(b.kind()));
    bool bothInt = a.kind() == ValueKind::Int && b.kind() == ValueKind::Int;
    if (bothInt) {
        int64_t x = a.asInt();
        int64_t y = b.asInt();
        switch (op) {
            case ArithOp::Add: return Value::makeInt(checkedAdd(x, y));
            case ArithOp::Sub: return Value::makeInt(checkedSub(x, y));
            case ArithOp::Mul: return Value::makeInt(checkedMul(x, y));
            case ArithOp::Div:
                if (y == 0) throw EngineError(ErrorCode::DivisionByZero, a.toString() + " / 0");
                if (x % y == 0 && !(x == INT64_MIN && y == -1)) return Value::makeInt(x / y);
                return Value::makeFloat(static_cast<double>(x) / static_cast<double>(y));
        }
    }
    double x = a.kind() == ValueKind::Int ? static_cast<double>(a.asInt()) : a.asFloat();
    double y = b.kind() == ValueKind::Int ? static_cast<double>(b.asInt()) : b.asFloat();
    switch (op) {
        case ArithOp::Add: return Value::makeFloat(x + y);
        case ArithOp::Sub: return Value::makeFloat(x - y);
        case ArithOp::Mul: return Value::makeFloat(x * y);
        case ArithOp::Div:
            if (y == 0.0) throw EngineError(ErrorCode::DivisionByZero, a.toString() + " / 0.0");
            return Value::makeFloat(x / y);
    }
    return Value();
}

} // namespace stagelog
