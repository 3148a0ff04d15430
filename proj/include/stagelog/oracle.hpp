#pragma once

#include <cstdint>
#include <vector>

#include "stagelog/value.hpp"

namespace stagelog {
namespace oracle {

/// Desk-scale reference implementations, deliberately slow and literal.
/// The permutation oracles enumerate every ordering of the input set the
/// way the two-rule Horn definition of continuous count does: extend a
/// prefix with any element not yet consumed, pairing each running value
/// with the prefix that produced it.

constexpr size_t kMaxOracleSet = 7;

struct CountState {
    int64_t count;
    std::vector<Value> prefix; // distinct elements, most recent first
};

/// All derivable (running count, prefix) states over s. The projection of
/// the first component is exactly {1..|s|}.
std::vector<CountState> permCountStates(const std::vector<Value>& s);

/// Cardinality of s obtained from the permutation states plus the
/// "no state with count C+1 exists" closing test.
int64_t permFinalCount(const std::vector<Value>& s);

/// Final sum: folds every permutation and checks they all agree
/// (exactly for Int inputs, 1e-9 relative for Float).
Value permFinalSum(const std::vector<Value>& s);

/// Average: permutation sum divided by the permutation count, as Float.
Value permFinalAvg(const std::vector<Value>& s);

/// Extremum by folding a larger/smaller two-way choice over every
/// permutation; all orderings must agree.
Value permFinalMax(const std::vector<Value>& s);
Value permFinalMin(const std::vector<Value>& s);

// ---- Markov chain ---------------------------------------------------------

/// Validates every row sums to 1 within 1e-12; throws NonStochasticRow.
void checkRowStochastic(const std::vector<std::vector<double>>& matrix);

/// One step of the population flow: out[j] = sum_i v[i] * m[i][j].
std::vector<double> markovStep(const std::vector<std::vector<double>>& matrix,
                               const std::vector<double>& v);

/// Iterated vector-matrix product for a fixed number of steps.
std::vector<double> markovReference(const std::vector<std::vector<double>>& matrix,
                                    std::vector<double> init, int steps);

/// Runs until the max component change is <= epsilon (or maxSteps).
/// Returns the final vector and the number of steps taken.
std::pair<std::vector<double>, int> markovReferenceConverge(
    const std::vector<std::vector<double>>& matrix, std::vector<double> init, double epsilon,
    int maxSteps);

// ---- Lloyd's clustering ---------------------------------------------------

struct KMeansTrace {
    /// assignments[j][p] = index of the center nearest to point p under the
    /// stage-j centers (ties to the smaller center index).
    std::vector<std::vector<int>> assignments;
    /// centers[j] = centers entering stage j; centers[0] is the init.
    std::vector<std::vector<std::vector<double>>> centers;
    /// wcss[j] = within-cluster sum of squared distances at stage j.
    std::vector<double> wcss;
    int iterations = 0; // center updates performed
};

/// Classic Lloyd iteration with squared-distance assignment. An empty
/// cluster keeps its previous center. Stops at the first assignment
/// fixpoint or after maxIters center updates.
KMeansTrace kmeansReference(const std::vector<std::vector<double>>& points,
                            const std::vector<std::vector<double>>& initCenters, int maxIters);

} // namespace oracle
} // namespace stagelog
