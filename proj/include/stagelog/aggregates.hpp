#pragma once

#include <cstdint>
#include <optional>
#include <utility>

#include "stagelog/ast.hpp"
#include "stagelog/value.hpp"

namespace stagelog {

/// Per-group running state for one aggregate. The continuous phase
/// (accumulate) is monotonic: feeding more elements never retracts a
/// previous running value. finalize closes the group once the caller has
/// established that every contribution has been seen.
///
/// The caller guarantees each accumulated value is a fresh contribution
/// (the engine deduplicates ground derivations upstream).
class Accumulator {
public:
    explicit Accumulator(AggKind kind) : kind_(kind) {}

    AggKind kind() const { return kind_; }
    int64_t count() const { return count_; }

    void accumulate(const Value& v);

    /// count -> Int n; sum -> running sum; avg -> sum/n as Float;
    /// min/max -> the extremum. Throws EmptyGroup for min/max/avg when
    /// nothing was accumulated.
    Value finalize() const;

private:
    AggKind kind_;
    int64_t count_ = 0;
    bool sumIsFloat_ = false;
    int64_t intSum_ = 0;
    double floatSum_ = 0.0;
    std::optional<Value> extremum_;
};

/// encd(d, id): packs two values into one ordered pair; min/max over the
/// result orders by d first, id second.
Value encd(const Value& d, const Value& id);

/// decd(p): recovers the two components. Throws TypeMismatch on non-pairs.
std::pair<Value, Value> decd(const Value& p);

} // namespace stagelog
