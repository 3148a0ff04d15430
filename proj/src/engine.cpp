#include "stagelog/engine.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "stagelog/aggregates.hpp"

namespace stagelog {

const char* evalModeName(EvalMode m) {
    switch (m) {
        case EvalMode::Completed: return "completed";
        case EvalMode::StratifiedRewrite: return "stratified-rewrite";
        case EvalMode::Naive: return "naive";
    }
    return "?";
}

namespace {

// ---- working store ----------------------------------------------------------

/// Append-only tuple store with stable insertion order, hash dedup and lazy
/// single-position indexes. The frontier (delta) is a trailing row range.
class Table {
public:
    bool insert(Tuple t) {
        auto [it, ok] = set_.insert(std::move(t));
        if (!ok) return false;
        size_t id = rows_.size();
        rows_.push_back(&*it);
        for (auto& [pos, index] : idx_) {
            const Tuple& r = *rows_[id];
            if (pos < r.size()) index[r[pos]].push_back(id);
        }
        return true;
    }

    bool contains(const Tuple& t) const { return set_.count(t) > 0; }
    size_t size() const { return rows_.size(); }
    const Tuple& row(size_t id) const { return *rows_[id]; }

    size_t deltaBegin = 0;
    size_t deltaEnd = 0;

    const std::vector<size_t>* lookup(size_t pos, const Value& v) {
        auto& index = ensureIndex(pos);
        auto it = index.find(v);
        return it == index.end() ? nullptr : &it->second;
    }

    /// Keeps only rows satisfying `keep`, preserving order. Invalidates ids.
    void filterRows(const std::function<bool(const Tuple&)>& keep) {
        std::vector<Tuple> kept;
        kept.reserve(rows_.size());
        for (const Tuple* r : rows_)
            if (keep(*r)) kept.push_back(*r);
        set_.clear();
        rows_.clear();
        idx_.clear();
        deltaBegin = deltaEnd = 0;
        for (Tuple& t : kept) insert(std::move(t));
    }

private:
    using Index = std::unordered_map<Value, std::vector<size_t>, ValueHash>;

    Index& ensureIndex(size_t pos) {
        auto it = idx_.find(pos);
        if (it != idx_.end()) return it->second;
        Index& index = idx_[pos];
        for (size_t id = 0; id < rows_.size(); ++id) {
            const Tuple& r = *rows_[id];
            if (pos < r.size()) index[r[pos]].push_back(id);
        }
        return index;
    }

    std::unordered_set<Tuple, TupleHash> set_;
    std::vector<const Tuple*> rows_;
    std::map<size_t, Index> idx_;
};

// ---- rule plans --------------------------------------------------------------

struct EvalPlan {
    std::vector<size_t> atomOrder;              // literal indices of positive atoms
    std::vector<std::vector<size_t>> goalSlots; // goals to run after k atoms are bound
    size_t deltaAtom = SIZE_MAX;                // this literal reads the frontier
};

struct CompiledRule {
    size_t index = 0;
    const Rule* rule = nullptr;
    bool isAgg = false;
    std::vector<size_t> posAtoms;  // literal indices
    std::vector<size_t> compAtoms; // positive atoms whose pred is in the component
    EvalPlan basePlan;
    std::vector<EvalPlan> rotations; // one per comp atom (it reads the frontier)
};

bool termEvaluableWith(const Term& t, const std::vector<char>& bound) {
    switch (t.kind) {
        case Term::Kind::Constant: return true;
        case Term::Kind::Variable: return bound[t.var] != 0;
        case Term::Kind::Wildcard: return false;
        case Term::Kind::Arith:
            return termEvaluableWith(*t.lhs, bound) && termEvaluableWith(*t.rhs, bound);
    }
    return false;
}

EvalPlan makePlan(const Rule& r, const std::vector<size_t>& posAtoms, size_t frontAtom) {
    EvalPlan plan;
    plan.atomOrder = posAtoms;
    if (frontAtom != SIZE_MAX) {
        auto it = std::find(plan.atomOrder.begin(), plan.atomOrder.end(), frontAtom);
        std::rotate(plan.atomOrder.begin(), it, it + 1);
        plan.deltaAtom = frontAtom;
    }
    plan.goalSlots.resize(plan.atomOrder.size() + 1);

    std::vector<char> bound(r.varNames.size(), 0);
    std::vector<char> assigned(r.body.size(), 0);
    auto bindAtomVars = [&](size_t li) {
        for (const Term& t : r.body[li].atom.args)
            if (t.isVariable()) bound[t.var] = 1;
    };
    auto allVarsBound = [&](const Atom& a) {
        for (const Term& t : a.args) {
            std::set<int> vars;
            t.collectVars(vars);
            for (int v : vars)
                if (!bound[v]) return false;
        }
        return true;
    };
    for (size_t slot = 0; slot <= plan.atomOrder.size(); ++slot) {
        if (slot > 0) bindAtomVars(plan.atomOrder[slot - 1]);
        bool progress = true;
        while (progress) {
            progress = false;
            for (size_t li = 0; li < r.body.size(); ++li) {
                if (assigned[li]) continue;
                const Literal& l = r.body[li];
                bool ready = false;
                switch (l.kind) {
                    case Literal::Kind::Atom: continue; // handled by atomOrder
                    case Literal::Kind::NegatedAtom: ready = allVarsBound(l.atom); break;
                    case Literal::Kind::Comparison: {
                        bool le = termEvaluableWith(l.cmp.lhs, bound);
                        bool re = termEvaluableWith(l.cmp.rhs, bound);
                        if (le && re) {
                            ready = true;
                        } else if (l.cmp.op == CmpOp::Eq && le && l.cmp.rhs.isVariable()) {
                            ready = true;
                            bound[l.cmp.rhs.var] = 1;
                        } else if (l.cmp.op == CmpOp::Eq && re && l.cmp.lhs.isVariable()) {
                            ready = true;
                            bound[l.cmp.lhs.var] = 1;
                        }
                        break;
                    }
                    case Literal::Kind::Builtin: {
                        const auto& args = l.builtin.args;
                        if (l.builtin.kind == BuiltinKind::Encd) {
                            if (termEvaluableWith(args[0], bound) &&
                                termEvaluableWith(args[1], bound)) {
                                ready = true;
                                if (args[2].isVariable()) bound[args[2].var] = 1;
                            }
                        } else {
                            if (termEvaluableWith(args[0], bound)) {
                                ready = true;
                                if (args[1].isVariable()) bound[args[1].var] = 1;
                                if (args[2].isVariable()) bound[args[2].var] = 1;
                            }
                        }
                        break;
                    }
                }
                if (ready) {
                    assigned[li] = 1;
                    plan.goalSlots[slot].push_back(li);
                    progress = true;
                }
            }
        }
    }
    return plan;
}

// ---- max-over-stage post-condition pattern -----------------------------------

struct MaxStagePattern {
    std::string recPred;
    size_t stagePos = 0;
};

/// Matches `f(max<V>) :- q(..., V at q's stage position, ...)` where every
/// other argument of q is a wildcard or an otherwise-unused variable: the
/// head value is exactly the latest stage of q.
std::optional<MaxStagePattern> matchMaxStagePattern(
    const Rule& r, const std::map<std::string, size_t>& stagedPreds) {
    if (!r.head.isAggregate() || r.head.agg->kind != AggKind::Max) return std::nullopt;
    if (r.head.atom.args.size() != 1) return std::nullopt; // no group key
    if (r.body.size() != 1 || r.body[0].kind != Literal::Kind::Atom) return std::nullopt;
    const Atom& a = r.body[0].atom;
    auto it = stagedPreds.find(a.pred);
    if (it == stagedPreds.end()) return std::nullopt;
    size_t sp = it->second;
    if (sp >= a.args.size()) return std::nullopt;
    const Term& st = a.args[sp];
    if (!st.isVariable() || st.var != r.head.agg->var) return std::nullopt;
    for (size_t i = 0; i < a.args.size(); ++i) {
        if (i == sp) continue;
        const Term& t = a.args[i];
        if (t.kind == Term::Kind::Wildcard) continue;
        if (!t.isVariable() || t.var == st.var) return std::nullopt;
    }
    return MaxStagePattern{a.pred, sp};
}

// ---- engine -------------------------------------------------------------------

struct PendingFact {
    std::string pred;
    Tuple tuple;
    size_t ruleIdx;
};

class Engine {
public:
    Engine(const Program& p, const FactSet& edb, const EvalOptions& opts, bool useGuards)
        : p_(p), opts_(opts), useGuards_(useGuards) {
        if (opts_.maxIterations == 0) opts_.maxIterations = 1;
        plan_ = stratify(buildDependencyGraph(p), p);
        loadEdb(edb);
        for (const Component& c : plan_.evalOrder)
            if (c.stage)
                for (const std::string& q : c.preds) stagedPreds_[q] = c.stage->stagePos.at(q);
        for (size_t i = 0; i < p_.rules.size(); ++i)
            if (auto pat = matchMaxStagePattern(p_.rules[i], stagedPreds_))
                maxPatterns_[i] = *pat;
    }

    EvalResult run() {
        for (const Component& c : plan_.evalOrder) evalComponent(c);
        for (const std::string& pred : p_.idbPreds) {
            Table& t = tables_[pred];
            for (size_t i = 0; i < t.size(); ++i) result_.facts.insert(pred, t.row(i));
        }
        for (const auto& [pred, sp] : stagedPreds_) {
            Table& t = tables_[pred];
            auto maxStage = maxStageOf(t, sp);
            if (!maxStage) continue;
            for (size_t i = 0; i < t.size(); ++i) {
                const Tuple& row = t.row(i);
                if (row[sp].kind() == ValueKind::Int && row[sp].asInt() == *maxStage)
                    result_.finalDeltas.insert(pred, row);
            }
        }
        return std::move(result_);
    }

private:
    void loadEdb(const FactSet& edb) {
        for (const auto& [pred, rel] : edb.relations()) {
            if (p_.idbPreds.count(pred))
                throw EngineError(ErrorCode::UnknownPredicate,
                                  pred + " is defined by rules and cannot be given as facts");
            auto it = p_.edbSchemas.find(pred);
            if (it == p_.edbSchemas.end())
                throw EngineError(ErrorCode::UnknownPredicate,
                                  pred + " is not an input predicate of this program");
            for (const Tuple& t : rel) {
                if (t.size() != it->second)
                    throw EngineError(ErrorCode::ArityMismatch,
                                      pred + " fact has " + std::to_string(t.size()) +
                                          " fields, expected " + std::to_string(it->second));
                tables_[pred].insert(t);
            }
        }
    }

    std::ostream& traceOut() { return opts_.traceOut ? *opts_.traceOut : std::cerr; }

    static std::optional<int64_t> maxStageOf(Table& t, size_t sp) {
        std::optional<int64_t> best;
        for (size_t i = 0; i < t.size(); ++i) {
            const Tuple& row = t.row(i);
            if (sp < row.size() && row[sp].kind() == ValueKind::Int)
                if (!best || row[sp].asInt() > *best) best = row[sp].asInt();
        }
        return best;
    }

    // ---- rule evaluation ----

    struct RuleOutput {
        // group tuple (head args minus the aggregate slot) -> contributions
        std::map<Tuple, std::vector<Value>, TupleLess> groups;
        std::unordered_set<Tuple, TupleHash> dedup; // flattened matched facts
        uint64_t derivations = 0;
    };

    CompiledRule compileRule(size_t ri, const std::set<std::string>& compSet) {
        CompiledRule cr;
        cr.index = ri;
        cr.rule = &p_.rules[ri];
        cr.isAgg = cr.rule->head.isAggregate();
        for (size_t li = 0; li < cr.rule->body.size(); ++li)
            if (cr.rule->body[li].kind == Literal::Kind::Atom) {
                cr.posAtoms.push_back(li);
                if (compSet.count(cr.rule->body[li].atom.pred)) cr.compAtoms.push_back(li);
            }
        cr.basePlan = makePlan(*cr.rule, cr.posAtoms, SIZE_MAX);
        for (size_t li : cr.compAtoms) cr.rotations.push_back(makePlan(*cr.rule, cr.posAtoms, li));
        return cr;
    }

    bool unifyValue(const Term& t, const Value& v, Binding& b, std::vector<int>& trail,
                    const std::vector<std::string>& varNames) {
        switch (t.kind) {
            case Term::Kind::Wildcard: return true;
            case Term::Kind::Constant: return t.constant == v;
            case Term::Kind::Variable:
                if (b.isBound(t.var)) return b.get(t.var) == v;
                b.set(t.var, v);
                trail.push_back(t.var);
                return true;
            case Term::Kind::Arith: return evalTerm(t, b, varNames) == v;
        }
        return false;
    }

    bool matchesPattern(const Tuple& row, const Atom& a, Binding& b,
                        const std::vector<std::string>& varNames) {
        for (size_t i = 0; i < a.args.size(); ++i) {
            const Term& t = a.args[i];
            if (t.kind == Term::Kind::Wildcard) continue;
            if (evalTerm(t, b, varNames) != row[i]) return false;
        }
        return true;
    }

    bool runGoal(const Literal& l, Binding& b, std::vector<int>& trail,
                 const std::vector<std::string>& varNames) {
        switch (l.kind) {
            case Literal::Kind::Atom: return true;
            case Literal::Kind::NegatedAtom: {
                Table& t = tables_[l.atom.pred];
                // probe through an index on the first fixed argument
                for (size_t i = 0; i < l.atom.args.size(); ++i) {
                    const Term& arg = l.atom.args[i];
                    if (arg.kind == Term::Kind::Wildcard) continue;
                    Value v = evalTerm(arg, b, varNames);
                    const std::vector<size_t>* ids = t.lookup(i, v);
                    if (!ids) return true; // nothing matches this argument
                    for (size_t id : *ids)
                        if (matchesPattern(t.row(id), l.atom, b, varNames)) return false;
                    return true;
                }
                // all-wildcard pattern: fails iff any fact exists
                return t.size() == 0;
            }
            case Literal::Kind::Comparison: {
                const Comparison& c = l.cmp;
                bool le = termEvaluable(c.lhs, b);
                bool re = termEvaluable(c.rhs, b);
                if (le && re)
                    return compareValues(c.op, evalTerm(c.lhs, b, varNames),
                                         evalTerm(c.rhs, b, varNames));
                if (c.op == CmpOp::Eq && le && c.rhs.isVariable()) {
                    b.set(c.rhs.var, evalTerm(c.lhs, b, varNames));
                    trail.push_back(c.rhs.var);
                    return true;
                }
                if (c.op == CmpOp::Eq && re && c.lhs.isVariable()) {
                    b.set(c.lhs.var, evalTerm(c.rhs, b, varNames));
                    trail.push_back(c.lhs.var);
                    return true;
                }
                throw EngineError(ErrorCode::UnboundVariable, "comparison is not ground");
            }
            case Literal::Kind::Builtin: {
                const auto& args = l.builtin.args;
                if (l.builtin.kind == BuiltinKind::Encd) {
                    Value v = encd(evalTerm(args[0], b, varNames), evalTerm(args[1], b, varNames));
                    return unifyValue(args[2], v, b, trail, varNames);
                }
                auto [first, second] = decd(evalTerm(args[0], b, varNames));
                return unifyValue(args[1], first, b, trail, varNames) &&
                       unifyValue(args[2], second, b, trail, varNames);
            }
        }
        return false;
    }

    /// Enumerates all matches of `plan`; on each complete body instantiation
    /// calls sink(binding, matchedRows). matchedRows are indexed by position
    /// in cr.posAtoms (canonical order, rotation-independent).
    void enumerate(const CompiledRule& cr, const EvalPlan& plan, bool frontierForDelta,
                   const std::function<void(Binding&, std::vector<const Tuple*>&)>& sink) {
        const Rule& r = *cr.rule;
        Binding binding(r.varNames.size());
        std::vector<const Tuple*> matched(cr.posAtoms.size(), nullptr);

        std::function<void(size_t)> step = [&](size_t slot) {
            std::vector<int> trail;
            bool ok = true;
            for (size_t li : plan.goalSlots[slot]) {
                if (!runGoal(r.body[li], binding, trail, r.varNames)) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                if (slot == plan.atomOrder.size()) {
                    ++stats_.derivationAttempts;
                    sink(binding, matched);
                } else {
                    size_t li = plan.atomOrder[slot];
                    const Atom& atom = r.body[li].atom;
                    Table& t = tables_[atom.pred];
                    bool useFrontier = frontierForDelta && li == plan.deltaAtom;
                    size_t lo = useFrontier ? t.deltaBegin : 0;
                    size_t hi = useFrontier ? t.deltaEnd : t.size();

                    // pick an indexable argument (fixed under the current binding)
                    size_t idxPos = SIZE_MAX;
                    Value idxVal;
                    for (size_t i = 0; i < atom.args.size(); ++i) {
                        const Term& a = atom.args[i];
                        if (a.kind == Term::Kind::Constant ||
                            (a.isVariable() && binding.isBound(a.var)) ||
                            (a.kind == Term::Kind::Arith && termEvaluable(a, binding))) {
                            idxPos = i;
                            idxVal = evalTerm(a, binding, r.varNames);
                            break;
                        }
                    }
                    size_t atomSlot =
                        std::find(cr.posAtoms.begin(), cr.posAtoms.end(), li) - cr.posAtoms.begin();
                    auto tryRow = [&](size_t id) {
                        std::vector<int> rowTrail;
                        const Tuple& row = t.row(id);
                        bool match = true;
                        for (size_t i = 0; i < atom.args.size(); ++i) {
                            if (!unifyValue(atom.args[i], row[i], binding, rowTrail, r.varNames)) {
                                match = false;
                                break;
                            }
                        }
                        if (match) {
                            matched[atomSlot] = &row;
                            step(slot + 1);
                            matched[atomSlot] = nullptr;
                        }
                        for (int v : rowTrail) binding.unset(v);
                    };
                    if (idxPos != SIZE_MAX) {
                        const std::vector<size_t>* ids = t.lookup(idxPos, idxVal);
                        if (ids)
                            for (size_t id : *ids) {
                                if (id < lo || id >= hi) continue;
                                tryRow(id);
                            }
                    } else {
                        for (size_t id = lo; id < hi; ++id) tryRow(id);
                    }
                }
            }
            for (int v : trail) binding.unset(v);
        };
        step(0);
    }

    /// Evaluates one rule under the given plans, accumulating into `out`
    /// (aggregate rules) or directly into pending_ (plain rules).
    void evalRule(const CompiledRule& cr, const std::vector<const EvalPlan*>& plans,
                  bool frontier, RuleOutput* out) {
        const Rule& r = *cr.rule;
        try {
            for (const EvalPlan* plan : plans) {
                enumerate(cr, *plan, frontier, [&](Binding& b, std::vector<const Tuple*>& matched) {
                    if (cr.isAgg) {
                        Tuple key;
                        for (const Tuple* m : matched) {
                            if (!m) continue;
                            key.insert(key.end(), m->begin(), m->end());
                        }
                        if (!out->dedup.insert(std::move(key)).second) return;
                        ++out->derivations;
                        Tuple group;
                        group.reserve(r.head.atom.args.size() - 1);
                        for (size_t i = 0; i < r.head.atom.args.size(); ++i) {
                            if (i == r.head.agg->position) continue;
                            group.push_back(evalTerm(r.head.atom.args[i], b, r.varNames));
                        }
                        out->groups[std::move(group)].push_back(b.get(r.head.agg->var));
                    } else {
                        Tuple head;
                        head.reserve(r.head.atom.args.size());
                        for (const Term& t : r.head.atom.args)
                            head.push_back(evalTerm(t, b, r.varNames));
                        pending_.push_back({r.head.atom.pred, std::move(head), cr.index});
                    }
                });
            }
        } catch (EngineError& e) {
            if (e.code() == ErrorCode::NotStratifiable || e.code() == ErrorCode::CardinalityMismatch)
                throw;
            throw EngineError(e.code(), std::string(e.what()) + " (in rule " +
                                             std::to_string(cr.index + 1) + ": " + r.toString() +
                                             ")");
        }
    }

    /// Folds an aggregate rule's groups and pushes the head facts.
    void finalizeAggregate(const CompiledRule& cr, RuleOutput& out) {
        const Rule& r = *cr.rule;
        if (useGuards_ && out.derivations > 0) {
            auto git = p_.aggregateGuards.find(cr.index);
            if (git != p_.aggregateGuards.end()) {
                int64_t expected = 0;
                Table& gt = tables_[git->second];
                if (gt.size() > 0 && gt.row(0)[0].kind() == ValueKind::Int)
                    expected = gt.row(0)[0].asInt();
                if (static_cast<int64_t>(out.derivations) != expected)
                    throw EngineError(ErrorCode::CardinalityMismatch,
                                      "rule " + std::to_string(cr.index + 1) + " produced " +
                                          std::to_string(out.derivations) +
                                          " derivations this stage but " + git->second + " = " +
                                          std::to_string(expected));
            }
        }
        for (auto& [group, contributions] : out.groups) {
            std::sort(contributions.begin(), contributions.end(), storageLess);
            Accumulator acc(r.head.agg->kind);
            for (const Value& v : contributions) acc.accumulate(v);
            Tuple head;
            head.reserve(group.size() + 1);
            size_t gi = 0;
            for (size_t i = 0; i < r.head.atom.args.size(); ++i) {
                if (i == r.head.agg->position)
                    head.push_back(acc.finalize());
                else
                    head.push_back(group[gi++]);
            }
            pending_.push_back({r.head.atom.pred, std::move(head), cr.index});
        }
        out.groups.clear();
        out.dedup.clear();
        out.derivations = 0;
    }

    /// Applies pending facts; returns the newly inserted ones with provenance.
    std::vector<PendingFact> applyPending() {
        std::vector<PendingFact> fresh;
        for (PendingFact& pf : pending_) {
            if (tables_[pf.pred].insert(pf.tuple)) {
                ++stats_.factsInserted;
                fresh.push_back(std::move(pf));
            }
        }
        pending_.clear();
        return fresh;
    }

    // ---- convergence ----

    static bool closeEnough(const Value& a, const Value& b, double eps) {
        if (a.isNumeric() && b.isNumeric()) {
            double x = a.kind() == ValueKind::Int ? static_cast<double>(a.asInt()) : a.asFloat();
            double y = b.kind() == ValueKind::Int ? static_cast<double>(b.asInt()) : b.asFloat();
            return std::fabs(x - y) <= eps * std::max({std::fabs(x), std::fabs(y), 1.0});
        }
        if (a.kind() == ValueKind::Pair && b.kind() == ValueKind::Pair)
            return closeEnough(a.asPair().first, b.asPair().first, eps) &&
                   closeEnough(a.asPair().second, b.asPair().second, eps);
        return a == b;
    }

    /// True when every fact of the new stage matches its predecessor-stage
    /// group within epsilon, bijectively: the recursion has converged and no
    /// new frontier is needed.
    bool stageConverged(const std::vector<PendingFact>& fresh, const Component& comp) {
        if (!comp.stage || fresh.empty()) return false;
        const ComponentStageInfo& info = *comp.stage;
        std::map<std::pair<std::string, int64_t>, std::pair<int64_t, size_t>> stages;
        for (const PendingFact& pf : fresh) {
            auto rit = info.rules.find(pf.ruleIdx);
            if (rit == info.rules.end()) return false; // seed-derived fact
            int64_t inc = rit->second.evidence.increment;
            if (inc <= 0) return false; // mid-pipeline iteration
            size_t sp = info.stagePos.at(pf.pred);
            if (pf.tuple[sp].kind() != ValueKind::Int) return false;
            int64_t stage = pf.tuple[sp].asInt();

            auto [it, inserted] = stages.try_emplace({pf.pred, stage}, std::make_pair(inc, size_t{0}));
            if (!inserted && it->second.first != inc) return false;
            ++it->second.second;

            const Rule& r = p_.rules[pf.ruleIdx];
            std::optional<size_t> aggPos;
            if (r.head.isAggregate()) aggPos = r.head.agg->position;

            Table& t = tables_[pf.pred];
            const std::vector<size_t>* ids = t.lookup(sp, Value::makeInt(stage - inc));
            bool matched = false;
            if (ids) {
                for (size_t id : *ids) {
                    const Tuple& prev = t.row(id);
                    bool same = true;
                    for (size_t i = 0; i < prev.size() && same; ++i) {
                        if (i == sp) continue;
                        if (aggPos && i == *aggPos)
                            same = closeEnough(pf.tuple[i], prev[i], opts_.convergenceEpsilon);
                        else
                            same = pf.tuple[i] == prev[i];
                    }
                    if (same) {
                        matched = true;
                        break;
                    }
                }
            }
            if (!matched) return false;
        }
        // bijectivity: the new stage must cover every predecessor-stage fact
        for (const auto& [key, incCount] : stages) {
            const auto& [pred, stage] = key;
            Table& t = tables_[pred];
            size_t sp = info.stagePos.at(pred);
            const std::vector<size_t>* ids = t.lookup(sp, Value::makeInt(stage - incCount.first));
            size_t prevCount = ids ? ids->size() : 0;
            if (prevCount != incCount.second) return false;
        }
        return true;
    }

    // ---- memory optimization ----

    bool dropAllowed(const Component& comp, const std::string& pred) {
        std::set<std::string> patternHeads;
        std::set<std::string> compSet(comp.preds.begin(), comp.preds.end());
        for (const auto& [ri, pat] : maxPatterns_)
            if (pat.recPred == pred) patternHeads.insert(p_.rules[ri].head.atom.pred);
        size_t sp = stagedPreds_.at(pred);
        for (size_t ri = 0; ri < p_.rules.size(); ++ri) {
            if (compSet.count(p_.rules[ri].head.atom.pred)) continue; // inside the component
            if (maxPatterns_.count(ri) && maxPatterns_.at(ri).recPred == pred) continue;
            const Rule& r = p_.rules[ri];
            for (const Literal& l : r.body) {
                if (l.kind != Literal::Kind::Atom && l.kind != Literal::Kind::NegatedAtom) continue;
                if (l.atom.pred != pred) continue;
                const Term& st = l.atom.args[sp];
                if (!st.isVariable()) return false;
                // the stage variable must be anchored to a latest-stage marker
                bool anchored = false;
                for (const Literal& other : r.body) {
                    if (other.kind != Literal::Kind::Atom) continue;
                    if (!patternHeads.count(other.atom.pred)) continue;
                    if (other.atom.args.size() == 1 && other.atom.args[0].isVariable() &&
                        other.atom.args[0].var == st.var)
                        anchored = true;
                }
                if (!anchored) return false;
            }
        }
        return true;
    }

    void dropSuperseded(const Component& comp) {
        if (!opts_.dropSupersededStages || !comp.stage) return;
        const ComponentStageInfo& info = *comp.stage;
        for (const std::string& pred : comp.preds) {
            if (!dropAllowed_.count(pred)) dropAllowed_[pred] = dropAllowed(comp, pred);
            if (!dropAllowed_[pred]) continue;
            Table& t = tables_[pred];
            size_t sp = info.stagePos.at(pred);
            auto maxStage = maxStageOf(t, sp);
            if (!maxStage) continue;
            int64_t cutoff = *maxStage - (info.lookbackWindow - 1);
            size_t newCount = t.deltaEnd - t.deltaBegin;
            t.filterRows([&](const Tuple& row) {
                return row[sp].kind() != ValueKind::Int || row[sp].asInt() >= cutoff;
            });
            t.deltaEnd = t.size();
            t.deltaBegin = t.deltaEnd >= newCount ? t.deltaEnd - newCount : 0;
            if (opts_.trace)
                traceOut() << "drop " << pred << ": retained=" << t.size()
                           << " (stage >= " << cutoff << ")\n";
        }
    }

    void notePeaks(const Component& comp) {
        for (const std::string& pred : comp.preds) {
            size_t n = tables_[pred].size();
            auto& peak = stats_.peakFacts[pred];
            peak = std::max(peak, n);
        }
    }

    // ---- component evaluation ----

    void traceIteration(const Component& comp, uint64_t iter,
                        const std::vector<PendingFact>& fresh, uint64_t attempts) {
        if (!opts_.trace) return;
        std::optional<int64_t> stage;
        if (comp.stage)
            for (const PendingFact& pf : fresh) {
                size_t sp = comp.stage->stagePos.at(pf.pred);
                if (pf.tuple[sp].kind() == ValueKind::Int)
                    stage = stage ? std::max(*stage, pf.tuple[sp].asInt())
                                  : pf.tuple[sp].asInt();
            }
        traceOut() << "iter=" << iter;
        if (stage) traceOut() << " stage=" << *stage;
        traceOut() << " frontier=[";
        bool first = true;
        for (const std::string& pred : comp.preds) {
            Table& t = tables_[pred];
            if (!first) traceOut() << " ";
            first = false;
            traceOut() << pred << ":" << (t.deltaEnd - t.deltaBegin);
        }
        traceOut() << "] derivations=" << attempts << " new=" << fresh.size() << "\n";
    }

    void evalComponent(const Component& comp) {
        std::set<std::string> compSet(comp.preds.begin(), comp.preds.end());
        std::vector<CompiledRule> rules;
        for (size_t ri : comp.rules) rules.push_back(compileRule(ri, compSet));

        auto evalOnce = [&](bool seedsToo, bool recursiveToo, bool frontier) {
            std::map<size_t, RuleOutput> outputs;
            for (CompiledRule& cr : rules) {
                bool isSeed = cr.compAtoms.empty();
                if (isSeed && !seedsToo) continue;
                if (!isSeed && !recursiveToo) continue;
                if (auto pit = maxPatterns_.find(cr.index);
                    pit != maxPatterns_.end() && opts_.mode != EvalMode::Naive) {
                    // latest-stage post-condition: read the final delta directly
                    Table& t = tables_[pit->second.recPred];
                    auto maxStage = maxStageOf(t, pit->second.stagePos);
                    ++stats_.derivationAttempts;
                    if (maxStage)
                        pending_.push_back(
                            {cr.rule->head.atom.pred, {Value::makeInt(*maxStage)}, cr.index});
                    continue;
                }
                RuleOutput* out = cr.isAgg ? &outputs[cr.index] : nullptr;
                std::vector<const EvalPlan*> plans;
                if (!frontier || cr.compAtoms.empty()) {
                    plans.push_back(&cr.basePlan);
                } else {
                    for (const EvalPlan& plan : cr.rotations) plans.push_back(&plan);
                }
                evalRule(cr, plans, frontier && !cr.compAtoms.empty(), out);
                if (cr.isAgg) finalizeAggregate(cr, *out);
            }
        };

        if (opts_.mode == EvalMode::Naive && comp.recursive) {
            uint64_t iter = 0;
            while (true) {
                if (iter >= opts_.maxIterations) {
                    result_.iterationLimitHit = true;
                    break;
                }
                ++iter;
                ++stats_.iterations;
                uint64_t before = stats_.derivationAttempts;
                evalOnce(true, true, false);
                auto fresh = applyPending();
                notePeaks(comp);
                traceIteration(comp, iter, fresh, stats_.derivationAttempts - before);
                if (fresh.empty()) break;
                if (stageConverged(fresh, comp)) break;
            }
            return;
        }

        // seed pass
        {
            uint64_t before = stats_.derivationAttempts;
            evalOnce(true, false, false);
            auto fresh = applyPending();
            for (const std::string& pred : comp.preds) {
                Table& t = tables_[pred];
                t.deltaBegin = 0;
                t.deltaEnd = t.size();
            }
            notePeaks(comp);
            if (opts_.trace && comp.recursive)
                traceOut() << "seed comp=" << comp.preds.front() << " new=" << fresh.size()
                           << " derivations=" << (stats_.derivationAttempts - before) << "\n";
        }
        if (!comp.recursive || comp.recursiveRules.empty()) return;

        uint64_t iter = 0;
        while (true) {
            bool frontierEmpty = true;
            for (const std::string& pred : comp.preds) {
                Table& t = tables_[pred];
                if (t.deltaEnd > t.deltaBegin) frontierEmpty = false;
            }
            if (frontierEmpty) break;
            if (iter >= opts_.maxIterations) {
                result_.iterationLimitHit = true;
                break;
            }
            ++iter;
            ++stats_.iterations;
            uint64_t before = stats_.derivationAttempts;
            std::map<std::string, size_t> oldSize;
            for (const std::string& pred : comp.preds) oldSize[pred] = tables_[pred].size();
            evalOnce(false, true, true);
            auto fresh = applyPending();
            notePeaks(comp);
            traceIteration(comp, iter, fresh, stats_.derivationAttempts - before);
            if (fresh.empty()) break;
            bool converged = stageConverged(fresh, comp);
            // advance the frontier to the newly derived rows
            for (const std::string& pred : comp.preds) {
                Table& t = tables_[pred];
                t.deltaBegin = oldSize[pred];
                t.deltaEnd = t.size();
            }
            if (converged) {
                if (opts_.trace) traceOut() << "converged comp=" << comp.preds.front() << "\n";
                break;
            }
            dropSuperseded(comp);
        }
    }

    const Program& p_;
    EvalOptions opts_;
    bool useGuards_;
    StratumPlan plan_;
    std::map<std::string, Table> tables_;
    std::vector<PendingFact> pending_;
    std::map<std::string, size_t> stagedPreds_; // pred -> stage position
    std::map<size_t, MaxStagePattern> maxPatterns_;
    std::map<std::string, bool> dropAllowed_;
    EvalStats stats_;
    EvalResult result_;

public:
    EvalStats& stats() { return stats_; }
};

} // namespace

EvalResult evaluateProgram(const Program& p, const FactSet& edb, const EvalOptions& opts) {
    if (opts.mode == EvalMode::StratifiedRewrite)
        return evaluateRewritten(stratifiedRewrite(p), edb, opts);
    Engine engine(p, edb, opts, /*useGuards=*/false);
    EvalResult r = engine.run();
    r.stats = engine.stats();
    return r;
}

EvalResult evaluateRewritten(const Program& rewritten, const FactSet& edb,
                             const EvalOptions& opts) {
    EvalOptions o = opts;
    o.mode = EvalMode::StratifiedRewrite;
    Engine engine(rewritten, edb, o, /*useGuards=*/true);
    EvalResult r = engine.run();
    r.stats = engine.stats();
    return r;
}

} // namespace stagelog
