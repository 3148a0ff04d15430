#include "stagelog/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "stagelog/aggregates.hpp"

namespace stagelog {
namespace oracle {

namespace {

void checkSize(const std::vector<Value>& s) {
    if (s.size() > kMaxOracleSet)
        throw EngineError(ErrorCode::SizeLimit,
                          "permutation oracle limited to " + std::to_string(kMaxOracleSet) +
                              " elements, got " + std::to_string(s.size()));
}

bool contains(const std::vector<Value>& prefix, const Value& v) {
    for (const Value& x : prefix)
        if (x == v) return true;
    return false;
}

/// Applies `fold` along every permutation of s and returns the set of final
/// results (deduplicated with operator==).
template <typename State, typename Fold>
std::vector<State> foldAllPermutations(const std::vector<Value>& s, State init, Fold fold) {
    std::vector<Value> sorted = s;
    std::sort(sorted.begin(), sorted.end(), storageLess);
    std::vector<State> results;
    std::vector<int> perm(sorted.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    do {
        State st = init;
        for (int idx : perm) st = fold(st, sorted[idx]);
        results.push_back(st);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return results;
}

} // namespace

std::vector<CountState> permCountStates(const std::vector<Value>& s) {
    checkSize(s);
    std::vector<CountState> all;
    // breadth-first closure of: start a prefix with any element, or extend an
    // existing prefix with any element it does not already contain
    std::vector<CountState> frontier;
    for (const Value& v : s) frontier.push_back({1, {v}});
    while (!frontier.empty()) {
        std::vector<CountState> next;
        for (CountState& st : frontier) {
            for (const Value& v : s) {
                if (contains(st.prefix, v)) continue;
                CountState ext{st.count + 1, st.prefix};
                ext.prefix.insert(ext.prefix.begin(), v);
                next.push_back(ext);
            }
            all.push_back(std::move(st));
        }
        frontier = std::move(next);
    }
    return all;
}

int64_t permFinalCount(const std::vector<Value>& s) {
    auto states = permCountStates(s);
    // final count C: some state has count C and none has C+1
    int64_t best = 0;
    for (const CountState& st : states) best = std::max(best, st.count);
    for (const CountState& st : states)
        if (st.count == best + 1) throw EngineError(ErrorCode::SizeLimit, "unreachable");
    return best;
}

namespace {

bool sumsAgree(const Value& a, const Value& b) {
    if (a.kind() == ValueKind::Int && b.kind() == ValueKind::Int) return a.asInt() == b.asInt();
    double x = a.kind() == ValueKind::Int ? static_cast<double>(a.asInt()) : a.asFloat();
    double y = b.kind() == ValueKind::Int ? static_cast<double>(b.asInt()) : b.asFloat();
    double scale = std::max({std::fabs(x), std::fabs(y), 1.0});
    return std::fabs(x - y) <= 1e-9 * scale;
}

} // namespace

Value permFinalSum(const std::vector<Value>& s) {
    checkSize(s);
    if (s.empty()) return Value::makeInt(0);
    auto results = foldAllPermutations<Value>(
        s, Value::makeInt(0), [](const Value& acc, const Value& v) {
            return arith(ArithOp::Add, acc, v);
        });
    for (const Value& r : results)
        if (!sumsAgree(r, results.front()))
            throw EngineError(ErrorCode::TypeMismatch, "permutation sums disagree");
    return results.front();
}

Value permFinalAvg(const std::vector<Value>& s) {
    Value sum = permFinalSum(s);
    int64_t n = permFinalCount(s);
    double x = sum.kind() == ValueKind::Int ? static_cast<double>(sum.asInt()) : sum.asFloat();
    return Value::makeFloat(x / static_cast<double>(n));
}

namespace {

Value permExtremum(const std::vector<Value>& s, CmpOp keepLeft) {
    checkSize(s);
    if (s.empty()) throw EngineError(ErrorCode::EmptyGroup, "extremum of empty set");
    auto results = foldAllPermutations<std::optional<Value>>(
        s, std::nullopt, [&](const std::optional<Value>& acc, const Value& v) -> std::optional<Value> {
            if (!acc) return v;
            // larger(M, X, M1) / smaller(M, X, M1) as a two-way comparison
            return compareValues(keepLeft, *acc, v) ? *acc : v;
        });
    for (const auto& r : results)
        if (!(*r == *results.front()))
            throw EngineError(ErrorCode::TypeMismatch, "permutation extrema disagree");
    return *results.front();
}

} // namespace

Value permFinalMax(const std::vector<Value>& s) { return permExtremum(s, CmpOp::Gt); }
Value permFinalMin(const std::vector<Value>& s) { return permExtremum(s, CmpOp::Lt); }

// ---- Markov chain ----------------------------------------------------------

void checkRowStochastic(const std::vector<std::vector<double>>& matrix) {
    for (size_t i = 0; i < matrix.size(); ++i) {
        if (matrix[i].size() != matrix.size())
            throw EngineError(ErrorCode::NonStochasticRow,
                              "row " + std::to_string(i) + " has wrong length");
        double sum = 0.0;
        for (double x : matrix[i]) sum += x;
        if (std::fabs(sum - 1.0) > 1e-12)
            throw EngineError(ErrorCode::NonStochasticRow,
                              "row " + std::to_string(i) + " sums to " + formatFloat(sum));
    }
}

std::vector<double> markovStep(const std::vector<std::vector<double>>& matrix,
                               const std::vector<double>& v) {
    std::vector<double> out(v.size(), 0.0);
    for (size_t i = 0; i < v.size(); ++i)
        for (size_t j = 0; j < v.size(); ++j) out[j] += v[i] * matrix[i][j];
    return out;
}

std::vector<double> markovReference(const std::vector<std::vector<double>>& matrix,
                                    std::vector<double> init, int steps) {
    checkRowStochastic(matrix);
    for (int s = 0; s < steps; ++s) init = markovStep(matrix, init);
    return init;
}

std::pair<std::vector<double>, int> markovReferenceConverge(
    const std::vector<std::vector<double>>& matrix, std::vector<double> init, double epsilon,
    int maxSteps) {
    checkRowStochastic(matrix);
    for (int s = 1; s <= maxSteps; ++s) {
        std::vector<double> next = markovStep(matrix, init);
        double change = 0.0;
        for (size_t i = 0; i < init.size(); ++i)
            change = std::max(change, std::fabs(next[i] - init[i]));
        init = std::move(next);
        if (change <= epsilon) return {init, s};
    }
    return {init, maxSteps};
}

// ---- Lloyd's clustering -----------------------------------------------------

namespace {

double sqDist(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return d;
}

} // namespace

KMeansTrace kmeansReference(const std::vector<std::vector<double>>& points,
                            const std::vector<std::vector<double>>& initCenters, int maxIters) {
    KMeansTrace trace;
    std::vector<std::vector<double>> centers = initCenters;
    for (int j = 0;; ++j) {
        std::vector<int> assign(points.size(), 0);
        double wcss = 0.0;
        for (size_t p = 0; p < points.size(); ++p) {
            int best = 0;
            double bestDist = sqDist(points[p], centers[0]);
            for (size_t c = 1; c < centers.size(); ++c) {
                double d = sqDist(points[p], centers[c]);
                if (d < bestDist) { // ties keep the smaller center index
                    bestDist = d;
                    best = static_cast<int>(c);
                }
            }
            assign[p] = best;
            wcss += bestDist;
        }
        trace.centers.push_back(centers);
        trace.assignments.push_back(assign);
        trace.wcss.push_back(wcss);
        if (j > 0 && trace.assignments[j - 1] == assign) break; // assignment fixpoint
        if (j >= maxIters) break;

        std::vector<std::vector<double>> next(centers.size());
        std::vector<int> sizes(centers.size(), 0);
        for (size_t c = 0; c < centers.size(); ++c) next[c].assign(points[0].size(), 0.0);
        for (size_t p = 0; p < points.size(); ++p) {
            ++sizes[assign[p]];
            for (size_t d = 0; d < points[p].size(); ++d) next[assign[p]][d] += points[p][d];
        }
        for (size_t c = 0; c < centers.size(); ++c) {
            if (sizes[c] == 0) {
                next[c] = centers[c]; // empty cluster keeps its center
                continue;
            }
            for (double& x : next[c]) x /= sizes[c];
        }
        centers = std::move(next);
        trace.iterations = j + 1;
    }
    return trace;
}

} // namespace oracle
} // namespace stagelog
