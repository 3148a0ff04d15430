#include "stagelog/aggregates.hpp"

namespace stagelog {

void Accumulator::accumulate(const Value& v) {
    switch (kind_) {
        case AggKind::Count: break;
        case AggKind::Sum:
        case AggKind::Avg: {
            if (!v.isNumeric())
                throw EngineError(ErrorCode::TypeMismatch,
                                  std::string("cannot sum a ") + valueKindName(v.kind()));
            if (v.kind() == ValueKind::Float && !sumIsFloat_) {
                sumIsFloat_ = true;
                floatSum_ = static_cast<double>(intSum_);
            }
            if (sumIsFloat_) {
                floatSum_ += v.kind() == ValueKind::Int ? static_cast<double>(v.asInt()) : v.asFloat();
            } else {
                Value next = arith(ArithOp::Add, Value::makeInt(intSum_), v);
                intSum_ = next.asInt();
            }
            break;
        }
        case AggKind::Min:
        case AggKind::Max: {
            if (!extremum_) {
                extremum_ = v;
                break;
            }
            CmpOp op = kind_ == AggKind::Min ? CmpOp::Lt : CmpOp::Gt;
            if (compareValues(op, v, *extremum_)) extremum_ = v;
            break;
        }
    }
    ++count_;
}

Value Accumulator::finalize() const {
    switch (kind_) {
        case AggKind::Count: return Value::makeInt(count_);
        case AggKind::Sum:
            return sumIsFloat_ ? Value::makeFloat(floatSum_) : Value::makeInt(intSum_);
        case AggKind::Avg: {
            if (count_ == 0) throw EngineError(ErrorCode::EmptyGroup, "avg of an empty group");
            double s = sumIsFloat_ ? floatSum_ : static_cast<double>(intSum_);
            return Value::makeFloat(s / static_cast<double>(count_));
        }
        case AggKind::Min:
        case AggKind::Max:
            if (!extremum_)
                throw EngineError(ErrorCode::EmptyGroup,
                                  std::string(aggKindName(kind_)) + " of an empty group");
            return *extremum_;
    }
    throw EngineError(ErrorCode::EmptyGroup, "unknown aggregate");
}

Value encd(const Value& d, const Value& id) { return Value::makePair(d, id); }

std::pair<Value, Value> decd(const Value& p) {
    if (p.kind() != ValueKind::Pair)
        throw EngineError(ErrorCode::TypeMismatch,
                          std::string("decd expects a pair, got ") + valueKindName(p.kind()));
    return p.asPair();
}

} // namespace stagelog
