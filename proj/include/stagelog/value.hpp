#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "stagelog/errors.hpp"

namespace stagelog {

class Value;

using SymbolRef = std::shared_ptr<const std::string>;

/// Hands out one canonical shared string per distinct symbol, so equality
/// can short-circuit on pointer identity. Values keep their symbol alive
/// beyond the interner's lifetime.
class Interner {
public:
    SymbolRef intern(std::string_view text);

private:
    std::unordered_map<std::string, SymbolRef> pool_;
};

enum class ValueKind : uint8_t { Int, Float, Symbol, Pair };

const char* valueKindName(ValueKind kind);

/// Runtime constant: 64-bit integer, 64-bit float, interned symbol, or an
/// ordered pair (lexicographic). Immutable and cheap to copy.
class Value {
public:
    using PairRep = std::shared_ptr<const std::pair<Value, Value>>;

    Value() : repr_(int64_t{0}) {}

    static Value makeInt(int64_t v) { return Value(v); }
    static Value makeFloat(double v) { return Value(v); }
    static Value makeSymbol(SymbolRef interned) { return Value(std::move(interned)); }
    static Value makePair(Value first, Value second) {
        return Value(std::make_shared<const std::pair<Value, Value>>(std::move(first), std::move(second)));
    }

    ValueKind kind() const { return static_cast<ValueKind>(repr_.index()); }
    bool isNumeric() const { return kind() == ValueKind::Int || kind() == ValueKind::Float; }

    int64_t asInt() const { return std::get<int64_t>(repr_); }
    double asFloat() const { return std::get<double>(repr_); }
    const std::string& asSymbol() const { return *std::get<SymbolRef>(repr_); }
    const std::pair<Value, Value>& asPair() const { return *std::get<PairRep>(repr_); }

    /// Numeric value widened to long double (holds every int64 exactly).
    long double widened() const {
        return kind() == ValueKind::Int ? static_cast<long double>(asInt())
                                        : static_cast<long double>(asFloat());
    }

    bool operator==(const Value& other) const;
    bool operator!=(const Value& other) const { return !(*this == other); }

    size_t hash() const;

    /// Rendering used by the pretty-printer and table output. Symbols are
    /// printed bare, floats with 17 significant digits (round-trippable).
    std::string toString() const;

private:
    explicit Value(int64_t v) : repr_(v) {}
    explicit Value(double v) : repr_(v) {}
    explicit Value(SymbolRef s) : repr_(std::move(s)) {}
    explicit Value(PairRep p) : repr_(std::move(p)) {}

    std::variant<int64_t, double, SymbolRef, PairRep> repr_;
};

/// Total order over all Values, used wherever determinism requires sorting
/// (fact output, accumulation order). Numerics sort together by value with
/// Int before Float on ties; then symbols by string; then pairs
/// lexicographically.
bool storageLess(const Value& a, const Value& b);

struct ValueHash {
    size_t operator()(const Value& v) const { return v.hash(); }
};

enum class CmpOp : uint8_t { Eq, Ne, Lt, Le, Gt, Ge };

const char* cmpOpName(CmpOp op);

/// Typed comparison as used in rule bodies. Int/Float mix compares
/// numerically; Symbol vs numeric is a TypeMismatch.
bool compareValues(CmpOp op, const Value& a, const Value& b);

enum class ArithOp : char { Add = '+', Sub = '-', Mul = '*', Div = '/' };

/// Typed arithmetic: Int op Int stays Int (overflow is an error), any Float
/// operand promotes to Float. Int/Int division is exact when divisible,
/// otherwise promotes. Symbols and pairs do not support arithmetic.
Value arith(ArithOp op, const Value& a, const Value& b);

std::string formatFloat(double v);

} // namespace stagelog
