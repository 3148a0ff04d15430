#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "stagelog/ast.hpp"

namespace stagelog {

enum class EdgeKind : uint8_t { Positive, Negative, Aggregate };

struct DepEdge {
    std::string from; // head predicate
    std::string to;   // body predicate
    EdgeKind kind;
    size_t rule; // rule index that contributed this edge
};

struct DependencyGraph {
    std::set<std::string> nodes;
    std::vector<DepEdge> edges;
};

DependencyGraph buildDependencyGraph(const Program& p);

/// Why a recursive aggregate rule is admissible: the head carries a stage
/// argument that strictly partitions derived facts across iterations.
struct StageEvidence {
    size_t stagePos = 0;   // stage argument position in the head predicate
    int64_t increment = 0; // head stage minus the driving body atom's stage
};

struct RuleStageInfo {
    StageEvidence evidence;
    /// body literal index -> head stage minus that atom's stage (>= 0)
    std::map<size_t, int64_t> atomOffsets;
};

struct ComponentStageInfo {
    std::map<std::string, size_t> stagePos; // per component predicate
    std::map<size_t, RuleStageInfo> rules;  // recursive rules only
    int64_t seedStage = 0;
    bool hasSeed = false;
    int64_t cycleLength = 1;    // engine iterations per stage advance
    int64_t lookbackWindow = 1; // stages a body may reach back
};

/// One strongly connected component of the dependency graph, with its rules.
struct Component {
    std::vector<std::string> preds; // sorted
    std::vector<size_t> rules;      // head in component, program order
    std::vector<size_t> seedRules;  // no body atom inside the component
    std::vector<size_t> recursiveRules;
    bool recursive = false;
    std::optional<ComponentStageInfo> stage; // present iff recursive aggregates admitted
};

struct StratumPlan {
    std::vector<std::vector<std::string>> strata; // level -> IDB predicates, sorted
    std::map<std::string, size_t> predStratum;    // IDB predicates only
    std::map<size_t, size_t> ruleStratum;
    std::vector<Component> evalOrder; // bottom-up evaluation order

    std::string explainText(const Program& p) const;
};

/// Computes the stratification. Negation and aggregation across components
/// force strictly lower strata; recursion through an aggregate is admitted
/// only when the component passes the stage-discipline analysis, otherwise
/// throws NotStratifiable with a cycle diagnostic.
StratumPlan stratify(const DependencyGraph& g, const Program& p);

/// Stage analysis for one rule of a recursive component: evidence that the
/// rule advances a stage argument, or the reason it does not qualify.
std::variant<StageEvidence, std::string> checkStageEvidence(const Program& p, size_t ruleIdx,
                                                            const std::set<std::string>& component);

/// Emits the stratified form of a program whose recursive aggregates passed
/// the stage analysis: per component, stage-stripped seed relations
/// (base_<pred>), one per-stage cardinality rule (precount_rN) for each
/// recursive aggregate rule, then the original rules. Programs without
/// recursive aggregates are returned unchanged. The produced program's
/// aggregateGuards maps each recursive aggregate rule to its precount
/// predicate; rewrite-mode evaluation checks the per-stage derivation count
/// against it.
Program stratifiedRewrite(const Program& p);

} // namespace stagelog
