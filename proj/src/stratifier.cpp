#include "stagelog/stratifier.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <queue>
#include <sstream>

namespace stagelog {

DependencyGraph buildDependencyGraph(const Program& p) {
    DependencyGraph g;
    for (const auto& [pred, arity] : p.arities) g.nodes.insert(pred);
    for (size_t i = 0; i < p.rules.size(); ++i) {
        const Rule& r = p.rules[i];
        bool agg = r.head.isAggregate();
        for (const Literal& l : r.body) {
            if (l.kind == Literal::Kind::Atom)
                g.edges.push_back({r.head.atom.pred, l.atom.pred,
                                   agg ? EdgeKind::Aggregate : EdgeKind::Positive, i});
            else if (l.kind == Literal::Kind::NegatedAtom)
                g.edges.push_back({r.head.atom.pred, l.atom.pred, EdgeKind::Negative, i});
        }
        // guard-count predicates (rewrite metadata) must sit strictly below
        auto git = p.aggregateGuards.find(i);
        if (git != p.aggregateGuards.end())
            g.edges.push_back({r.head.atom.pred, git->second, EdgeKind::Aggregate, i});
    }
    return g;
}

namespace {

// ---- stage analysis --------------------------------------------------------

struct LinearForm {
    bool valid = false;
    bool hasVar = false;
    int var = -1;
    int64_t c = 0;
};

LinearForm linearOf(const Term& t) {
    switch (t.kind) {
        case Term::Kind::Constant:
            if (t.constant.kind() == ValueKind::Int) return {true, false, -1, t.constant.asInt()};
            return {};
        case Term::Kind::Variable: return {true, true, t.var, 0};
        case Term::Kind::Wildcard: return {};
        case Term::Kind::Arith: {
            LinearForm a = linearOf(*t.lhs);
            LinearForm b = linearOf(*t.rhs);
            if (!a.valid || !b.valid) return {};
            if (t.op == ArithOp::Add) {
                if (a.hasVar && b.hasVar) return {};
                if (a.hasVar) return {true, true, a.var, a.c + b.c};
                if (b.hasVar) return {true, true, b.var, a.c + b.c};
                return {true, false, -1, a.c + b.c};
            }
            if (t.op == ArithOp::Sub) {
                if (b.hasVar) return {};
                if (a.hasVar) return {true, true, a.var, a.c - b.c};
                return {true, false, -1, a.c - b.c};
            }
            return {};
        }
    }
    return {};
}

/// Union-find with offsets: tracks var = root + delta relations derived from
/// the rule's equality goals, plus one virtual constant root (value 0).
class StageRelations {
public:
    explicit StageRelations(size_t varCount)
        : parent_(varCount + 1), delta_(varCount + 1, 0), constRoot_(static_cast<int>(varCount)) {
        std::iota(parent_.begin(), parent_.end(), 0);
    }

    void addRule(const Rule& r) {
        for (const Literal& l : r.body) {
            if (l.kind != Literal::Kind::Comparison || l.cmp.op != CmpOp::Eq) continue;
            LinearForm a = linearOf(l.cmp.lhs);
            LinearForm b = linearOf(l.cmp.rhs);
            if (!a.valid || !b.valid) continue;
            if (a.hasVar && b.hasVar) {
                relate(a.var, b.var, b.c - a.c); // a.var + a.c = b.var + b.c
            } else if (a.hasVar) {
                relate(a.var, constRoot_, b.c - a.c);
            } else if (b.hasVar) {
                relate(b.var, constRoot_, a.c - b.c);
            }
        }
    }

    bool consistent() const { return ok_; }

    /// Normalizes a linear form to (root, offset): value = value(root) + offset.
    std::optional<std::pair<int, int64_t>> normalize(const LinearForm& lf) {
        if (!lf.valid) return std::nullopt;
        auto [r, d] = find(lf.hasVar ? lf.var : constRoot_);
        return std::make_pair(r, d + lf.c);
    }

    int constRootNode() { return find(constRoot_).first; }

private:
    std::pair<int, int64_t> find(int v) {
        if (parent_[v] == v) return {v, 0};
        auto [r, d] = find(parent_[v]);
        parent_[v] = r;
        delta_[v] += d;
        return {r, delta_[v]};
    }

    void relate(int a, int b, int64_t d) { // a = b + d
        auto [ra, da] = find(a);
        auto [rb, db] = find(b);
        if (ra == rb) {
            if (da != db + d) ok_ = false;
            return;
        }
        parent_[ra] = rb;
        delta_[ra] = db + d - da;
    }

    std::vector<int> parent_;
    std::vector<int64_t> delta_;
    int constRoot_;
    bool ok_ = true;
};

struct StageFailure {
    int rank = 0; // how far the candidate got; higher = more informative
    std::string reason;
};

struct RuleOffsets {
    // literal index -> (pred, offset)
    std::vector<std::pair<size_t, int64_t>> atoms; // literal idx, offset
    std::vector<std::string> atomPreds;
};

using StageResult = std::variant<ComponentStageInfo, StageFailure>;

/// Tries one per-predicate stage-position assignment for the component.
StageResult tryCandidate(const Program& p, const Component& comp,
                         const std::map<std::string, size_t>& stagePos) {
    ComponentStageInfo info;
    info.stagePos = stagePos;

    std::set<std::string> compSet(comp.preds.begin(), comp.preds.end());

    // every aggregate head in the component must keep the stage in its group key
    for (size_t ri : comp.rules) {
        const Rule& r = p.rules[ri];
        if (r.head.isAggregate() && r.head.agg->position == stagePos.at(r.head.atom.pred))
            return StageFailure{0, "rule " + std::to_string(ri + 1) +
                                       ": the stage argument coincides with the aggregate "
                                       "position, so the stage is not in the group key"};
    }

    std::map<size_t, RuleOffsets> offsets; // recursive rule -> per-atom offsets
    std::optional<int64_t> seedStage;

    for (size_t ri : comp.rules) {
        const Rule& r = p.rules[ri];
        StageRelations rel(r.varNames.size());
        rel.addRule(r);
        if (!rel.consistent())
            return StageFailure{1, "rule " + std::to_string(ri + 1) +
                                       ": contradictory stage equalities"};
        const Term& headStage = r.head.atom.args[stagePos.at(r.head.atom.pred)];
        auto headNorm = rel.normalize(linearOf(headStage));

        // component atoms of this rule
        std::vector<std::pair<size_t, int>> compAtoms; // literal idx, stage var
        bool bad = false;
        std::string badReason;
        for (size_t li = 0; li < r.body.size(); ++li) {
            const Literal& l = r.body[li];
            if (l.kind != Literal::Kind::Atom || !compSet.count(l.atom.pred)) continue;
            const Term& st = l.atom.args[stagePos.at(l.atom.pred)];
            if (!st.isVariable()) {
                bad = true;
                badReason = "rule " + std::to_string(ri + 1) +
                            ": the stage argument of a recursive body atom is not a variable";
                break;
            }
            compAtoms.emplace_back(li, st.var);
        }
        if (bad) return StageFailure{1, badReason};

        if (compAtoms.empty()) {
            // seed rule: head stage must be one constant per component
            if (!headNorm || headNorm->first != rel.constRootNode())
                return StageFailure{3, "rule " + std::to_string(ri + 1) +
                                           ": seed rule stage is not a constant"};
            if (seedStage && *seedStage != headNorm->second)
                return StageFailure{3, "seed rules disagree on the starting stage"};
            seedStage = headNorm->second;
            continue;
        }

        if (!headNorm)
            return StageFailure{2, "rule " + std::to_string(ri + 1) +
                                       ": head stage term is not linear stage arithmetic"};
        if (headNorm->first == rel.constRootNode())
            return StageFailure{2, "rule " + std::to_string(ri + 1) +
                                       ": recursive rule derives a fixed stage"};

        RuleOffsets ro;
        for (auto [li, var] : compAtoms) {
            auto bodyNorm = rel.normalize(LinearForm{true, true, var, 0});
            if (!bodyNorm || bodyNorm->first != headNorm->first)
                return StageFailure{1, "rule " + std::to_string(ri + 1) +
                                           ": stage argument is not carried from body to head"};
            int64_t off = headNorm->second - bodyNorm->second;
            if (off < 0)
                return StageFailure{2, "rule " + std::to_string(ri + 1) +
                                           ": stage decreases from body to head"};
            ro.atoms.emplace_back(li, off);
            ro.atomPreds.push_back(r.body[li].atom.pred);
        }
        offsets[ri] = std::move(ro);
    }

    info.hasSeed = seedStage.has_value();
    info.seedStage = seedStage.value_or(0);

    // reject cycles that never advance the stage
    {
        std::map<std::string, std::set<std::string>> zeroAdj;
        for (const auto& [ri, ro] : offsets) {
            const Rule& r = p.rules[ri];
            for (size_t k = 0; k < ro.atoms.size(); ++k)
                if (ro.atoms[k].second == 0) zeroAdj[ro.atomPreds[k]].insert(r.head.atom.pred);
        }
        // DFS cycle check over zero-increment edges
        std::map<std::string, int> state; // 0 unseen, 1 active, 2 done
        std::function<bool(const std::string&)> hasCycle = [&](const std::string& u) {
            state[u] = 1;
            for (const std::string& v : zeroAdj[u]) {
                if (state[v] == 1) return true;
                if (state[v] == 0 && hasCycle(v)) return true;
            }
            state[u] = 2;
            return false;
        };
        for (const std::string& pred : comp.preds)
            if (state[pred] == 0 && hasCycle(pred))
                return StageFailure{4,
                                    "a recursive cycle never increases the stage argument "
                                    "(non-increasing stage)"};
    }

    // timing consistency: stage-s facts of every predicate must arrive in a
    // single iteration. Model arrival as a_p + L*s' (s' in gcd-scaled stage
    // units) and require every producer of a predicate to agree.
    int64_t g = 0;
    for (const auto& [ri, ro] : offsets)
        for (const auto& [li, off] : ro.atoms) g = std::gcd(g, off);
    if (g == 0) g = 1; // no positive increment anywhere; zero-cycle check passed
                       // so there is no cycle at all among recursive atoms

    int64_t maxL = 1;
    for (const auto& [ri, ro] : offsets) maxL += static_cast<int64_t>(ro.atoms.size());

    const int64_t UNKNOWN = INT64_MIN;
    std::optional<int64_t> goodL;
    std::map<std::string, int64_t> phases;
    for (int64_t L = 1; L <= maxL && !goodL; ++L) {
        std::map<std::string, int64_t> a;
        for (const std::string& pred : comp.preds) a[pred] = UNKNOWN;
        for (size_t ri : comp.rules) {
            const Rule& r = p.rules[ri];
            if (!offsets.count(ri) && info.hasSeed) a[r.head.atom.pred] = 0; // seed arrival
        }
        int bound = static_cast<int>((comp.preds.size() + comp.rules.size() + 4) *
                                     (comp.preds.size() + 2));
        bool changed = true;
        int iter = 0;
        while (changed && iter++ < bound) {
            changed = false;
            for (const auto& [ri, ro] : offsets) {
                const Rule& r = p.rules[ri];
                int64_t t = INT64_MIN;
                bool known = true;
                for (size_t k = 0; k < ro.atoms.size(); ++k) {
                    int64_t ab = a[ro.atomPreds[k]];
                    if (ab == UNKNOWN) {
                        known = false;
                        break;
                    }
                    t = std::max(t, ab - L * (ro.atoms[k].second / g));
                }
                if (!known) continue;
                t += 1;
                int64_t& ah = a[r.head.atom.pred];
                if (ah == UNKNOWN || t > ah) {
                    ah = t;
                    changed = true;
                }
            }
        }
        if (changed) continue; // diverged under this L
        // verify single-arrival: every producer delivers at the same time
        bool ok = true;
        for (size_t ri : comp.rules) {
            const Rule& r = p.rules[ri];
            if (!offsets.count(ri)) {
                if (info.hasSeed && a[r.head.atom.pred] != 0) ok = false; // seed overtaken
                continue;
            }
            const RuleOffsets& ro = offsets.at(ri);
            int64_t t = INT64_MIN;
            bool known = true;
            for (size_t k = 0; k < ro.atoms.size(); ++k) {
                int64_t ab = a[ro.atomPreds[k]];
                if (ab == UNKNOWN) {
                    known = false;
                    break;
                }
                t = std::max(t, ab - L * (ro.atoms[k].second / g));
            }
            if (!known) continue; // rule can never fire
            if (t + 1 != a[r.head.atom.pred]) ok = false;
        }
        if (ok) {
            goodL = L;
            phases = a;
        }
    }
    if (!goodL)
        return StageFailure{4,
                            "stage timing is inconsistent: some stage's facts would arrive "
                            "across multiple iterations"};

    info.cycleLength = *goodL * g;
    info.lookbackWindow = 1;
    for (const auto& [ri, ro] : offsets) {
        RuleStageInfo rsi;
        rsi.evidence.stagePos = stagePos.at(p.rules[ri].head.atom.pred);
        // driver = latest-arriving atom
        int64_t best = INT64_MIN;
        int64_t driverOff = 0;
        for (size_t k = 0; k < ro.atoms.size(); ++k) {
            int64_t ab = phases.count(ro.atomPreds[k]) ? phases[ro.atomPreds[k]] : UNKNOWN;
            int64_t score = ab == UNKNOWN ? INT64_MIN : ab - *goodL * (ro.atoms[k].second / g);
            if (k == 0 || score > best) {
                best = score;
                driverOff = ro.atoms[k].second;
            }
            rsi.atomOffsets[ro.atoms[k].first] = ro.atoms[k].second;
            info.lookbackWindow = std::max(info.lookbackWindow, ro.atoms[k].second);
        }
        rsi.evidence.increment = driverOff;
        info.rules[ri] = std::move(rsi);
    }
    return info;
}

StageResult analyzeComponent(const Program& p, const Component& comp) {
    // enumerate candidate stage positions (cartesian over component preds)
    std::vector<std::string> preds = comp.preds; // sorted
    std::vector<size_t> arity;
    for (const std::string& q : preds) arity.push_back(p.arities.at(q));
    for (size_t a : arity)
        if (a == 0)
            return StageFailure{0, "component predicate has no arguments to carry a stage"};

    StageFailure best{-1, "no stage argument found"};
    std::vector<size_t> pick(preds.size(), 0);
    while (true) {
        std::map<std::string, size_t> stagePos;
        for (size_t i = 0; i < preds.size(); ++i) stagePos[preds[i]] = pick[i];
        StageResult res = tryCandidate(p, comp, stagePos);
        if (std::holds_alternative<ComponentStageInfo>(res)) return res;
        const StageFailure& f = std::get<StageFailure>(res);
        if (f.rank > best.rank) best = f;
        // advance
        size_t i = 0;
        for (; i < pick.size(); ++i) {
            if (++pick[i] < arity[i]) break;
            pick[i] = 0;
        }
        if (i == pick.size()) break;
    }
    return best;
}

std::string cyclePath(const std::set<std::string>& comp,
                      const std::map<std::string, std::set<std::string>>& adj,
                      const std::string& from, const std::string& to) {
    // BFS path from `from` to `to` inside the component
    std::map<std::string, std::string> prev;
    std::queue<std::string> q;
    q.push(from);
    prev[from] = "";
    while (!q.empty()) {
        std::string u = q.front();
        q.pop();
        if (u == to) break;
        auto it = adj.find(u);
        if (it == adj.end()) continue;
        for (const std::string& v : it->second) {
            if (!comp.count(v) || prev.count(v)) continue;
            prev[v] = u;
            q.push(v);
        }
    }
    if (!prev.count(to)) return from + " -> " + to;
    std::vector<std::string> path;
    for (std::string u = to; !u.empty(); u = prev[u]) path.push_back(u);
    std::reverse(path.begin(), path.end());
    std::string s;
    for (const std::string& u : path) {
        if (!s.empty()) s += " -> ";
        s += u;
    }
    return s;
}

} // namespace

std::variant<StageEvidence, std::string> checkStageEvidence(const Program& p, size_t ruleIdx,
                                                            const std::set<std::string>& component) {
    Component comp;
    comp.preds.assign(component.begin(), component.end());
    for (size_t i = 0; i < p.rules.size(); ++i)
        if (component.count(p.rules[i].head.atom.pred)) comp.rules.push_back(i);
    StageResult res = analyzeComponent(p, comp);
    if (std::holds_alternative<StageFailure>(res)) return std::get<StageFailure>(res).reason;
    const ComponentStageInfo& info = std::get<ComponentStageInfo>(res);
    auto it = info.rules.find(ruleIdx);
    if (it == info.rules.end()) return std::string("rule is not recursive in this component");
    return it->second.evidence;
}

StratumPlan stratify(const DependencyGraph& g, const Program& p) {
    // adjacency, deduplicated and sorted for determinism
    std::map<std::string, std::set<std::string>> adj;
    for (const std::string& n : g.nodes) adj[n];
    for (const DepEdge& e : g.edges) adj[e.from].insert(e.to);

    // Tarjan; components come out dependencies-first
    std::map<std::string, int> index, low;
    std::map<std::string, int> compOf;
    std::vector<std::vector<std::string>> comps;
    std::vector<std::string> stack;
    std::set<std::string> onStack;
    int counter = 0;
    std::function<void(const std::string&)> dfs = [&](const std::string& u) {
        index[u] = low[u] = counter++;
        stack.push_back(u);
        onStack.insert(u);
        for (const std::string& v : adj[u]) {
            if (!index.count(v)) {
                dfs(v);
                low[u] = std::min(low[u], low[v]);
            } else if (onStack.count(v)) {
                low[u] = std::min(low[u], index[v]);
            }
        }
        if (low[u] == index[u]) {
            std::vector<std::string> comp;
            while (true) {
                std::string v = stack.back();
                stack.pop_back();
                onStack.erase(v);
                compOf[v] = static_cast<int>(comps.size());
                comp.push_back(v);
                if (v == u) break;
            }
            std::sort(comp.begin(), comp.end());
            comps.push_back(std::move(comp));
        }
    };
    for (const std::string& n : g.nodes)
        if (!index.count(n)) dfs(n);

    // intra-component admissibility
    std::vector<bool> selfRecursive(comps.size(), false);
    std::vector<bool> hasInternalAggregate(comps.size(), false);
    for (const DepEdge& e : g.edges) {
        if (compOf[e.from] != compOf[e.to]) continue;
        int c = compOf[e.from];
        selfRecursive[c] = true;
        std::set<std::string> compSet(comps[c].begin(), comps[c].end());
        if (e.kind == EdgeKind::Negative) {
            throw EngineError(ErrorCode::NotStratifiable,
                              "recursion through negation: " +
                                  cyclePath(compSet, adj, e.to, e.from) + " -> " + e.to +
                                  " (rule " + std::to_string(e.rule + 1) + " negates " + e.to + ")");
        }
        if (e.kind == EdgeKind::Aggregate) hasInternalAggregate[c] = true;
    }

    // levels: negative/aggregate edges across components force a strictly
    // lower stratum, positive edges allow sharing one
    std::vector<int> level(comps.size(), 0);
    // comps are emitted dependencies-first, so one pass suffices
    for (size_t c = 0; c < comps.size(); ++c) {
        for (const DepEdge& e : g.edges) {
            if (compOf[e.from] != static_cast<int>(c)) continue;
            int d = compOf[e.to];
            if (d == static_cast<int>(c)) continue;
            int need = level[d] + (e.kind == EdgeKind::Positive ? 0 : 1);
            level[c] = std::max(level[c], need);
        }
    }

    StratumPlan plan;

    // components with rules, in dependency order (Kahn with (level, name) priority)
    std::vector<std::set<int>> depsOf(comps.size());
    std::vector<std::set<int>> dependents(comps.size());
    for (const DepEdge& e : g.edges) {
        int cu = compOf[e.from], cv = compOf[e.to];
        if (cu != cv && !depsOf[cu].count(cv)) {
            depsOf[cu].insert(cv);
            dependents[cv].insert(cu);
        }
    }
    auto priority = [&](int c) { return std::make_pair(level[c], comps[c].front()); };
    std::vector<int> remaining(comps.size());
    for (size_t c = 0; c < comps.size(); ++c) remaining[c] = static_cast<int>(depsOf[c].size());
    std::set<std::pair<std::pair<int, std::string>, int>> ready;
    for (size_t c = 0; c < comps.size(); ++c)
        if (remaining[c] == 0) ready.insert({priority(static_cast<int>(c)), static_cast<int>(c)});
    std::vector<int> order;
    while (!ready.empty()) {
        int c = ready.begin()->second;
        ready.erase(ready.begin());
        order.push_back(c);
        for (int u : dependents[c])
            if (--remaining[u] == 0) ready.insert({priority(u), u});
    }

    // rules per component
    std::map<int, std::vector<size_t>> rulesOf;
    for (size_t i = 0; i < p.rules.size(); ++i) rulesOf[compOf[p.rules[i].head.atom.pred]].push_back(i);

    // display strata: normalize IDB levels to consecutive indices
    std::set<int> idbLevels;
    for (const std::string& pred : p.idbPreds) idbLevels.insert(level[compOf[pred]]);
    std::map<int, size_t> levelIndex;
    for (int l : idbLevels) levelIndex.emplace(l, levelIndex.size());
    plan.strata.resize(levelIndex.size());
    for (const std::string& pred : p.idbPreds) {
        size_t s = levelIndex[level[compOf[pred]]];
        plan.strata[s].push_back(pred);
        plan.predStratum[pred] = s;
    }
    for (auto& s : plan.strata) std::sort(s.begin(), s.end());
    for (size_t i = 0; i < p.rules.size(); ++i)
        plan.ruleStratum[i] = plan.predStratum[p.rules[i].head.atom.pred];

    for (int c : order) {
        if (!rulesOf.count(c)) continue; // EDB-only component
        Component comp;
        comp.preds = comps[c];
        comp.rules = rulesOf[c];
        comp.recursive = selfRecursive[c];
        std::set<std::string> compSet(comp.preds.begin(), comp.preds.end());
        for (size_t ri : comp.rules) {
            bool rec = false;
            for (const Literal& l : p.rules[ri].body)
                if (l.kind == Literal::Kind::Atom && compSet.count(l.atom.pred)) rec = true;
            (rec ? comp.recursiveRules : comp.seedRules).push_back(ri);
        }
        if (hasInternalAggregate[c]) {
            StageResult res = analyzeComponent(p, comp);
            if (std::holds_alternative<StageFailure>(res)) {
                std::string cyc;
                for (const std::string& q : comp.preds) {
                    if (!cyc.empty()) cyc += " -> ";
                    cyc += q;
                }
                throw EngineError(ErrorCode::NotStratifiable,
                                  "aggregate inside the recursive cycle [" + cyc + " -> " +
                                      comp.preds.front() + "]: " +
                                      std::get<StageFailure>(res).reason);
            }
            comp.stage = std::get<ComponentStageInfo>(res);
        }
        plan.evalOrder.push_back(std::move(comp));
    }
    return plan;
}

std::string StratumPlan::explainText(const Program& p) const {
    std::ostringstream os;
    if (!p.edbSchemas.empty()) {
        os << "edb:";
        for (const auto& [pred, arity] : p.edbSchemas) os << " " << pred << "/" << arity;
        os << "\n";
    }
    for (size_t s = 0; s < strata.size(); ++s) {
        os << "stratum " << s << ":";
        for (const std::string& pred : strata[s]) os << " " << pred;
        os << "\n";
    }
    bool any = false;
    for (const Component& c : evalOrder) {
        if (!c.stage) continue;
        for (const auto& [ri, rsi] : c.stage->rules) {
            if (!p.rules[ri].head.isAggregate()) continue;
            if (!any) {
                os << "stage evidence:\n";
                any = true;
            }
            os << "  rule " << (ri + 1) << " (" << p.rules[ri].head.atom.pred
               << "): stage argument " << rsi.evidence.stagePos << ", increment +"
               << rsi.evidence.increment << "\n";
        }
    }
    return os.str();
}

// ---- stratified rewrite -----------------------------------------------------

namespace {

/// Renumbers rule variables in first-occurrence order (head, then body,
/// depth-first through terms) so the rule parses back identically.
Rule compactRule(const Rule& r) {
    Rule out = r;
    std::vector<int> remap(r.varNames.size(), -1);
    std::vector<std::string> names;
    std::function<Term(const Term&)> mapTerm = [&](const Term& t) -> Term {
        switch (t.kind) {
            case Term::Kind::Variable: {
                if (remap[t.var] < 0) {
                    remap[t.var] = static_cast<int>(names.size());
                    names.push_back(r.varNames[t.var]);
                }
                return Term::variable(remap[t.var]);
            }
            case Term::Kind::Arith:
                return Term::arithOf(t.op, mapTerm(*t.lhs), mapTerm(*t.rhs));
            default: return t;
        }
    };
    for (Term& t : out.head.atom.args) t = mapTerm(t);
    for (Literal& l : out.body) {
        switch (l.kind) {
            case Literal::Kind::Atom:
            case Literal::Kind::NegatedAtom:
                for (Term& t : l.atom.args) t = mapTerm(t);
                break;
            case Literal::Kind::Comparison:
                l.cmp.lhs = mapTerm(l.cmp.lhs);
                l.cmp.rhs = mapTerm(l.cmp.rhs);
                break;
            case Literal::Kind::Builtin:
                for (Term& t : l.builtin.args) t = mapTerm(t);
                break;
        }
    }
    if (out.head.agg) out.head.agg->var = remap[out.head.agg->var];
    out.varNames = std::move(names);
    return out;
}

std::string uniqueName(const Program& p, std::string base) {
    while (p.arities.count(base)) base += "_";
    return base;
}

struct MappedRule {
    Rule rule;
    std::vector<char> bound; // bindable vars after the mapping
};

/// Strips stage arguments off component atoms (head too when baseHead is
/// set), then prunes goals whose variables can no longer be bound.
MappedRule seedMapRule(const Rule& r, const ComponentStageInfo& info,
                       const std::map<std::string, std::string>& baseName, bool baseHead) {
    Rule out = r;
    if (baseHead) {
        size_t sp = info.stagePos.at(out.head.atom.pred);
        out.head.atom.pred = baseName.at(out.head.atom.pred);
        out.head.atom.args.erase(out.head.atom.args.begin() + sp);
        if (out.head.agg && out.head.agg->position > sp) --out.head.agg->position;
    }
    for (Literal& l : out.body) {
        if (l.kind != Literal::Kind::Atom || !baseName.count(l.atom.pred)) continue;
        size_t sp = info.stagePos.at(l.atom.pred);
        l.atom.pred = baseName.at(l.atom.pred);
        l.atom.args.erase(l.atom.args.begin() + sp);
    }
    // bindability fixpoint over the stripped body
    std::vector<char> bound(out.varNames.size(), 0);
    std::function<bool(const Term&)> evaluable = [&](const Term& t) {
        switch (t.kind) {
            case Term::Kind::Constant: return true;
            case Term::Kind::Variable: return bound[t.var] != 0;
            case Term::Kind::Wildcard: return false;
            case Term::Kind::Arith: return evaluable(*t.lhs) && evaluable(*t.rhs);
        }
        return false;
    };
    bool changed = true;
    while (changed) {
        changed = false;
        auto mark = [&](const Term& t) {
            if (t.isVariable() && !bound[t.var]) {
                bound[t.var] = 1;
                changed = true;
            }
        };
        for (const Literal& l : out.body) {
            switch (l.kind) {
                case Literal::Kind::Atom:
                    for (const Term& t : l.atom.args) mark(t);
                    break;
                case Literal::Kind::Comparison:
                    if (l.cmp.op == CmpOp::Eq) {
                        if (l.cmp.lhs.isVariable() && evaluable(l.cmp.rhs)) mark(l.cmp.lhs);
                        if (l.cmp.rhs.isVariable() && evaluable(l.cmp.lhs)) mark(l.cmp.rhs);
                    }
                    break;
                case Literal::Kind::Builtin:
                    if (l.builtin.kind == BuiltinKind::Encd) {
                        if (evaluable(l.builtin.args[0]) && evaluable(l.builtin.args[1]))
                            mark(l.builtin.args[2]);
                    } else {
                        if (evaluable(l.builtin.args[0])) {
                            mark(l.builtin.args[1]);
                            mark(l.builtin.args[2]);
                        }
                    }
                    break;
                default: break;
            }
        }
    }
    auto allBound = [&](std::set<int> vars) {
        for (int v : vars)
            if (!bound[v]) return false;
        return true;
    };
    std::vector<Literal> keep;
    for (const Literal& l : out.body) {
        std::set<int> vars;
        switch (l.kind) {
            case Literal::Kind::Atom:
                keep.push_back(l);
                continue;
            case Literal::Kind::NegatedAtom:
                for (const Term& t : l.atom.args) t.collectVars(vars);
                if (!allBound(vars))
                    throw EngineError(ErrorCode::NotStratifiable,
                                      "cannot rewrite rule '" + r.toString() +
                                          "': a negated atom depends on the stage argument");
                keep.push_back(l);
                continue;
            case Literal::Kind::Comparison:
                l.cmp.lhs.collectVars(vars);
                l.cmp.rhs.collectVars(vars);
                break;
            case Literal::Kind::Builtin:
                for (const Term& t : l.builtin.args) t.collectVars(vars);
                break;
        }
        if (allBound(vars)) keep.push_back(l); // stage-variable goals drop out
    }
    out.body = std::move(keep);
    if (baseHead) {
        std::set<int> headVars;
        for (const Term& t : out.head.atom.args) t.collectVars(headVars);
        if (!allBound(headVars))
            throw EngineError(ErrorCode::NotStratifiable,
                              "cannot rewrite rule '" + r.toString() +
                                  "': the head depends on the stage argument beyond the stage "
                                  "position");
    }
    return {std::move(out), std::move(bound)};
}

} // namespace

Program stratifiedRewrite(const Program& p) {
    StratumPlan plan = stratify(buildDependencyGraph(p), p);
    bool anyStaged = false;
    for (const Component& c : plan.evalOrder) anyStaged |= c.stage.has_value();
    if (!anyStaged) return p;

    Program out;
    out.interner = p.interner;
    std::map<size_t, std::string> guards; // original rule idx -> precount pred

    for (const Component& c : plan.evalOrder) {
        if (!c.stage) continue;
        const ComponentStageInfo& info = *c.stage;
        std::map<std::string, std::string> baseName;
        for (const std::string& q : c.preds) baseName[q] = uniqueName(p, "base_" + q);

        // seed relations: constant-stage seed rules, stage-stripped
        for (size_t ri : c.seedRules) {
            MappedRule m = seedMapRule(p.rules[ri], info, baseName, true);
            out.rules.push_back(compactRule(m.rule));
        }
        // stage-preserving recursive rules unroll over the seed relations
        for (size_t ri : c.recursiveRules) {
            const RuleStageInfo& rsi = info.rules.at(ri);
            bool allZero = true;
            for (const auto& [li, off] : rsi.atomOffsets) allZero &= off == 0;
            if (!allZero) continue;
            MappedRule m = seedMapRule(p.rules[ri], info, baseName, true);
            out.rules.push_back(compactRule(m.rule));
        }
        // one per-stage cardinality rule per recursive aggregate rule
        for (size_t ri : c.recursiveRules) {
            const Rule& r = p.rules[ri];
            if (!r.head.isAggregate()) continue;
            MappedRule m = seedMapRule(r, info, baseName, false);
            std::string cname = uniqueName(p, "precount_r" + std::to_string(ri + 1));
            int countVar = -1;
            if (m.bound[r.head.agg->var]) {
                countVar = r.head.agg->var;
            } else {
                for (size_t v = 0; v < m.bound.size(); ++v)
                    if (m.bound[v]) {
                        countVar = static_cast<int>(v);
                        break;
                    }
            }
            if (countVar < 0)
                throw EngineError(ErrorCode::NotStratifiable,
                                  "cannot rewrite rule '" + r.toString() +
                                      "': no bound variable left to count");
            Rule pc = m.rule;
            pc.head.atom.pred = cname;
            pc.head.atom.args = {Term::variable(countVar)};
            pc.head.agg = AggSpec{0, AggKind::Count, countVar};
            out.rules.push_back(compactRule(pc));
            guards[ri] = cname;
        }
    }

    std::map<size_t, std::string> newGuards;
    for (size_t i = 0; i < p.rules.size(); ++i) {
        size_t newIdx = out.rules.size();
        out.rules.push_back(p.rules[i]);
        auto it = guards.find(i);
        if (it != guards.end()) newGuards[newIdx] = it->second;
    }
    out.aggregateGuards = std::move(newGuards);
    out.indexPredicates();
    return out;
}

} // namespace stagelog
