#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

#include "stagelog/factset.hpp"
#include "stagelog/stratifier.hpp"

namespace stagelog {

enum class EvalMode : uint8_t {
    Completed,         // semi-naive; aggregates complete at join exhaustion
    StratifiedRewrite, // formal form: cardinalities precomputed in a lower stratum
    Naive,             // full re-evaluation every iteration (reference)
};

const char* evalModeName(EvalMode m);

struct EvalOptions {
    EvalMode mode = EvalMode::Completed;
    uint64_t maxIterations = 1000;
    double convergenceEpsilon = 0.0; // 0 = halt only on exact stage repetition
    bool trace = false;
    std::ostream* traceOut = nullptr; // defaults to stderr when trace is set
    /// Drop stages that can no longer contribute (kept window = lookback).
    /// Honored only when every outside consumer of the predicate is a
    /// latest-stage post-condition; ignored otherwise.
    bool dropSupersededStages = false;
};

struct EvalStats {
    uint64_t iterations = 0;          // loop iterations across all recursive components
    uint64_t derivationAttempts = 0;  // complete body matches enumerated
    uint64_t factsInserted = 0;
    std::map<std::string, size_t> peakFacts; // per-predicate peak resident tuples
};

struct EvalResult {
    FactSet facts;      // all IDB relations (helpers included in rewrite mode)
    FactSet finalDeltas; // per staged recursive predicate: facts of its highest stage
    bool iterationLimitHit = false;
    EvalStats stats;
};

/// Evaluates a program bottom-up, stratum by stratum, under the selected
/// mode. The EDB must use only input predicates of the program, with
/// matching arities. Throws NotStratifiable and evaluation-time errors with
/// rule provenance.
EvalResult evaluateProgram(const Program& p, const FactSet& edb, const EvalOptions& opts);

/// Evaluates a program produced by stratifiedRewrite: the guard-count
/// relations are materialized in their own strata and every guarded
/// aggregate rule's per-stage derivation count is checked against them
/// (CardinalityMismatch on disagreement).
EvalResult evaluateRewritten(const Program& rewritten, const FactSet& edb,
                             const EvalOptions& opts);

} // namespace stagelog
