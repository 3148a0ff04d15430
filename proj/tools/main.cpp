#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stagelog/aggregates.hpp"
#include "stagelog/engine.hpp"
#include "stagelog/oracle.hpp"
#include "stagelog/parser.hpp"
#include "stagelog/stratifier.hpp"

namespace {

using namespace stagelog;

constexpr int kExitUsage = 1;
constexpr int kExitParse = 2;
constexpr int kExitStratify = 3;
constexpr int kExitEval = 4;
constexpr int kExitVerify = 5;

std::string readFile(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string csvField(const Value& v) {
    switch (v.kind()) {
        case ValueKind::Int:
        case ValueKind::Float: return v.toString();
        case ValueKind::Symbol: {
            std::string out = "\"";
            for (char c : v.asSymbol()) {
                if (c == '"') out += '"';
                out += c;
            }
            return out + "\"";
        }
        case ValueKind::Pair: {
            std::string out = "\"(";
            out += v.asPair().first.toString();
            out += ",";
            out += v.asPair().second.toString();
            return out + ")\"";
        }
    }
    return "";
}

void printRelation(std::ostream& os, const std::string& pred, const FactSet::Relation& rel,
                   const std::string& format) {
    if (format == "table") {
        os << "% " << pred << " (" << rel.size() << ")\n";
        for (const Tuple& t : rel) {
            for (size_t i = 0; i < t.size(); ++i) {
                if (i) os << "\t";
                os << t[i].toString();
            }
            os << "\n";
        }
        return;
    }
    for (const Tuple& t : rel) {
        os << pred;
        for (const Value& v : t) os << "," << csvField(v);
        os << "\n";
    }
}

// ---- oracle cross-checks for the recognized program shapes -----------------

bool valuesCloseRel(double a, double b, double tol) {
    return std::fabs(a - b) <= tol * std::max({std::fabs(a), std::fabs(b), 1.0});
}

/// Population-flow shape: a staged sum-aggregate predicate driven by one
/// 3-ary input relation of (from, to, fraction) arcs. Checks every engine
/// stage against iterated vector-matrix products from the stage-0 vector.
std::optional<bool> verifyMarkovShape(const Program& p, const StratumPlan& plan,
                                      const FactSet& edb, const FactSet& idb, std::ostream& os) {
    for (const Component& comp : plan.evalOrder) {
        if (!comp.stage) continue;
        for (size_t ri : comp.recursiveRules) {
            const Rule& r = p.rules[ri];
            if (!r.head.isAggregate() || r.head.agg->kind != AggKind::Sum) continue;
            if (r.head.atom.args.size() != 3) continue;
            std::string edbPred;
            size_t edbCount = 0;
            for (const Literal& l : r.body)
                if (l.kind == Literal::Kind::Atom && p.edbSchemas.count(l.atom.pred)) {
                    edbPred = l.atom.pred;
                    ++edbCount;
                }
            if (edbCount != 1 || p.edbSchemas.at(edbPred) != 3) continue;

            const std::string pred = r.head.atom.pred;
            size_t sp = comp.stage->stagePos.at(pred);
            size_t aggPos = r.head.agg->position;
            size_t cityPos = 3 - sp - aggPos; // the remaining position

            std::vector<Value> cities;
            for (const Tuple& t : edb.relation(edbPred)) {
                cities.push_back(t[0]);
                cities.push_back(t[1]);
            }
            std::sort(cities.begin(), cities.end(), storageLess);
            cities.erase(std::unique(cities.begin(), cities.end()), cities.end());
            std::map<Tuple, size_t, TupleLess> cityIdx;
            for (size_t i = 0; i < cities.size(); ++i) cityIdx[{cities[i]}] = i;

            size_t n = cities.size();
            std::vector<std::vector<double>> matrix(n, std::vector<double>(n, 0.0));
            for (const Tuple& t : edb.relation(edbPred)) {
                if (!t[2].isNumeric()) return std::nullopt;
                matrix[cityIdx[{t[0]}]][cityIdx[{t[1]}]] += t[2].widened();
            }
            try {
                oracle::checkRowStochastic(matrix);
            } catch (const EngineError&) {
                os << "verify: population-flow oracle: SKIP (arc fractions are not "
                      "row-stochastic)\n";
                return std::nullopt;
            }

            std::map<int64_t, std::vector<double>> stageVec;
            std::map<int64_t, size_t> stageCount;
            for (const Tuple& t : idb.relation(pred)) {
                if (t[sp].kind() != ValueKind::Int || !t[aggPos].isNumeric()) return std::nullopt;
                auto it = cityIdx.find({t[cityPos]});
                if (it == cityIdx.end()) return std::nullopt;
                auto& vec = stageVec[t[sp].asInt()];
                if (vec.empty()) vec.assign(n, 0.0);
                vec[it->second] = t[aggPos].widened();
                ++stageCount[t[sp].asInt()];
            }
            if (stageVec.empty() || !stageVec.count(0)) return std::nullopt;

            std::vector<double> v = stageVec[0];
            bool ok = true;
            int64_t maxStage = stageVec.rbegin()->first;
            for (int64_t j = 1; j <= maxStage && ok; ++j) {
                v = oracle::markovStep(matrix, v);
                auto it = stageVec.find(j);
                if (it == stageVec.end()) {
                    ok = false;
                    break;
                }
                for (size_t i = 0; i < n; ++i)
                    if (!valuesCloseRel(v[i], it->second[i], 1e-9)) ok = false;
            }
            os << "verify: engine==oracle (population flow, " << maxStage << " stages): "
               << (ok ? "PASS" : "FAIL") << "\n";
            return ok;
        }
    }
    return std::nullopt;
}

/// Clustering shape: point/init inputs with staged avg-centers and a staged
/// min-assignment predicate. Checks per-stage centers and assignments
/// against the textbook Lloyd iteration.
std::optional<bool> verifyKmeansShape(const Program& p, const StratumPlan& plan,
                                      const FactSet& edb, const FactSet& idb, std::ostream& os) {
    if (!p.edbSchemas.count("point") || !p.edbSchemas.count("init")) return std::nullopt;
    std::string centerPred, assignPred;
    size_t centerSp = 0, assignSp = 0;
    for (const Component& comp : plan.evalOrder) {
        if (!comp.stage) continue;
        for (size_t ri : comp.recursiveRules) {
            const Rule& r = p.rules[ri];
            if (!r.head.isAggregate()) continue;
            if (r.head.agg->kind == AggKind::Avg && r.head.atom.args.size() == 4) {
                centerPred = r.head.atom.pred;
                centerSp = comp.stage->stagePos.at(centerPred);
            }
            if (r.head.agg->kind == AggKind::Min && r.head.atom.args.size() == 3) {
                assignPred = r.head.atom.pred;
                assignSp = comp.stage->stagePos.at(assignPred);
            }
        }
    }
    if (centerPred.empty() || assignPred.empty()) return std::nullopt;

    // points and initial centers, ids and dims in sorted order
    std::set<Tuple, TupleLess> pnos, dims, cnos;
    for (const Tuple& t : edb.relation("point")) {
        pnos.insert({t[0]});
        dims.insert({t[1]});
    }
    for (const Tuple& t : edb.relation("init")) cnos.insert({t[0]});
    std::map<Tuple, size_t, TupleLess> pIdx, dIdx, cIdx;
    for (const Tuple& t : pnos) pIdx[t] = pIdx.size();
    for (const Tuple& t : dims) dIdx[t] = dIdx.size();
    for (const Tuple& t : cnos) cIdx[t] = cIdx.size();

    std::vector<std::vector<double>> points(pIdx.size(), std::vector<double>(dIdx.size(), 0.0));
    for (const Tuple& t : edb.relation("point")) {
        if (!t[2].isNumeric()) return std::nullopt;
        points[pIdx[{t[0]}]][dIdx[{t[1]}]] = t[2].widened();
    }
    std::vector<std::vector<double>> init(cIdx.size(), std::vector<double>(dIdx.size(), 0.0));
    for (const Tuple& t : edb.relation("init")) {
        if (!t[2].isNumeric()) return std::nullopt;
        init[cIdx[{t[0]}]][dIdx[{t[1]}]] = t[2].widened();
    }

    int64_t maxStage = 0;
    for (const Tuple& t : idb.relation(centerPred))
        if (t[centerSp].kind() == ValueKind::Int) maxStage = std::max(maxStage, t[centerSp].asInt());
    oracle::KMeansTrace trace = oracle::kmeansReference(points, init, static_cast<int>(maxStage) + 1);

    bool ok = true;
    // centers: group-key order (stage, Cno, Dim) within each stage
    for (const Tuple& t : idb.relation(centerPred)) {
        int64_t j = t[centerSp].asInt();
        if (j >= static_cast<int64_t>(trace.centers.size())) continue;
        size_t c = cIdx.count({t[1]}) ? cIdx[{t[1]}] : SIZE_MAX;
        size_t d = dIdx.count({t[2]}) ? dIdx[{t[2]}] : SIZE_MAX;
        if (c == SIZE_MAX || d == SIZE_MAX || !t[3].isNumeric()) {
            ok = false;
            break;
        }
        if (!valuesCloseRel(t[3].widened(), trace.centers[j][c][d], 1e-9)) ok = false;
    }
    // assignments via the packed (distance, center) pairs
    for (const Tuple& t : idb.relation(assignPred)) {
        int64_t j = t[assignSp].asInt();
        if (j >= static_cast<int64_t>(trace.assignments.size())) continue;
        if (t[2].kind() != ValueKind::Pair) {
            ok = false;
            break;
        }
        auto [dist, cno] = decd(t[2]);
        size_t pi = pIdx.count({t[1]}) ? pIdx[{t[1]}] : SIZE_MAX;
        size_t ci = cIdx.count({cno}) ? cIdx[{cno}] : SIZE_MAX;
        if (pi == SIZE_MAX || ci == SIZE_MAX) {
            ok = false;
            break;
        }
        if (static_cast<int>(ci) != trace.assignments[j][pi]) ok = false;
    }
    os << "verify: engine==oracle (clustering, " << maxStage << " stages): "
       << (ok ? "PASS" : "FAIL") << "\n";
    return ok;
}

int runVerify(const Program& p, const FactSet& edb, EvalOptions opts, std::ostream& os) {
    EvalOptions base = opts;
    base.trace = false;
    EvalOptions completed = base;
    completed.mode = EvalMode::Completed;
    EvalOptions rewrite = base;
    rewrite.mode = EvalMode::StratifiedRewrite;
    EvalOptions naive = base;
    naive.mode = EvalMode::Naive;

    EvalResult rc = evaluateProgram(p, edb, completed);
    EvalResult rr = evaluateProgram(p, edb, rewrite);
    EvalResult rn = evaluateProgram(p, edb, naive);

    std::set<std::string> preds(p.idbPreds.begin(), p.idbPreds.end());
    std::string diff;
    bool modesOk = factSetsMatch(rc.facts, rr.facts, 1e-9, preds, &diff);
    if (modesOk) modesOk = factSetsMatch(rc.facts, rn.facts, 1e-9, preds, &diff);
    os << "verify: completed == stratified-rewrite == naive: " << (modesOk ? "PASS" : "FAIL");
    if (!modesOk) os << " (" << diff << ")";
    os << "\n";

    StratumPlan plan = stratify(buildDependencyGraph(p), p);
    bool anyFail = !modesOk;
    if (auto r = verifyMarkovShape(p, plan, edb, rc.facts, os)) anyFail |= !*r;
    if (auto r = verifyKmeansShape(p, plan, edb, rc.facts, os)) anyFail |= !*r;
    return anyFail ? kExitVerify : 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"stagelog: a Datalog engine with aggregates in recursion"};
    app.require_subcommand(1);

    CLI::App* run = app.add_subcommand("run", "evaluate a program against fact files");
    std::string programPath;
    std::vector<std::string> factFiles;
    std::vector<std::string> factsDirFiles;
    std::vector<std::string> queries;
    bool all = false;
    std::string mode = "completed";
    uint64_t maxIterations = 1000;
    double epsilon = 0.0;
    bool trace = false;
    bool verify = false;
    bool explain = false;
    bool dropStages = false;
    std::string format = "csv";

    run->add_option("--program", programPath, "program file (.dl)")->required();
    run->add_option("--facts", factFiles, "CSV fact file (predicate name first; repeatable)");
    run->add_option("--facts-file", factsDirFiles,
                    "whitespace-separated relation file named <pred>.facts (repeatable)");
    run->add_option("--query", queries, "predicate to print (repeatable)");
    run->add_flag("--all", all, "print every derived predicate");
    run->add_option("--mode", mode, "completed | rewrite | naive")
        ->check(CLI::IsMember({"completed", "rewrite", "naive"}));
    run->add_option("--max-iterations", maxIterations, "fixpoint iteration bound (default 1000)");
    run->add_option("--epsilon", epsilon, "convergence tolerance between consecutive stages");
    run->add_flag("--trace", trace, "per-iteration trace on stderr");
    run->add_flag("--verify", verify, "cross-check evaluation modes and shape oracles");
    run->add_flag("--explain-strata", explain, "print the stratum plan");
    run->add_flag("--drop-superseded", dropStages, "drop stages once only the latest matters");
    run->add_option("--output", format, "csv | table")->check(CLI::IsMember({"csv", "table"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : kExitUsage;
    }

    if (queries.empty() && !all && !verify && !explain) {
        std::cerr << "error: give at least one --query, or --all (or --verify/--explain-strata)\n";
        return kExitUsage;
    }
    if (maxIterations == 0) {
        std::cerr << "error: --max-iterations must be at least 1\n";
        return kExitUsage;
    }

    Program program;
    FactSet edb;
    try {
        program = parseProgram(readFile(programPath));
        for (const std::string& f : factFiles) {
            FactSet part = parseFactFile(readFile(f), program.edbSchemas, *program.interner);
            edb.merge(part);
        }
        for (const std::string& f : factsDirFiles) {
            std::string stem = f;
            if (auto pos = stem.find_last_of('/'); pos != std::string::npos)
                stem = stem.substr(pos + 1);
            if (auto pos = stem.rfind(".facts"); pos != std::string::npos) stem = stem.substr(0, pos);
            FactSet part =
                parseFactsRelation(readFile(f), stem, program.edbSchemas, *program.interner);
            edb.merge(part);
        }
    } catch (const EngineError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return isParseError(e.code()) ? kExitParse : kExitEval;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    EvalOptions opts;
    opts.mode = mode == "rewrite" ? EvalMode::StratifiedRewrite
                : mode == "naive" ? EvalMode::Naive
                                  : EvalMode::Completed;
    opts.maxIterations = maxIterations;
    opts.convergenceEpsilon = epsilon;
    opts.trace = trace;
    opts.dropSupersededStages = dropStages;

    try {
        if (explain) {
            StratumPlan plan = stratify(buildDependencyGraph(program), program);
            std::cout << plan.explainText(program);
            if (queries.empty() && !all && !verify) return 0;
        }
        if (verify) {
            int rc = runVerify(program, edb, opts, std::cout);
            if (rc != 0) return rc;
            if (queries.empty() && !all) return 0;
        }
        EvalResult result = evaluateProgram(program, edb, opts);
        if (result.iterationLimitHit)
            std::cerr << "warning: iteration limit (" << maxIterations
                      << ") reached before a fixpoint; results are partial\n";
        std::vector<std::string> toPrint = queries;
        if (all) {
            toPrint.clear();
            for (const std::string& pred : program.idbPreds) toPrint.push_back(pred);
        }
        for (const std::string& pred : toPrint) {
            if (!program.idbPreds.count(pred) && !program.edbSchemas.count(pred)) {
                std::cerr << "error: unknown predicate: " << pred << "\n";
                return kExitUsage;
            }
            const FactSet::Relation& rel = program.idbPreds.count(pred)
                                               ? result.facts.relation(pred)
                                               : edb.relation(pred);
            printRelation(std::cout, pred, rel, format);
        }
        return 0;
    } catch (const EngineError& e) {
        std::cerr << "error: " << e.what() << "\n";
        if (e.code() == ErrorCode::NotStratifiable) return kExitStratify;
        return isParseError(e.code()) ? kExitParse : kExitEval;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitEval;
    }
}
