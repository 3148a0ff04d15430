#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "stagelog/value.hpp"

namespace stagelog {

using Tuple = std::vector<Value>;

struct TupleLess {
    bool operator()(const Tuple& a, const Tuple& b) const {
        size_t n = std::min(a.size(), b.size());
        for (size_t i = 0; i < n; ++i) {
            if (a[i] != b[i]) return storageLess(a[i], b[i]);
        }
        return a.size() < b.size();
    }
};

struct TupleHash {
    size_t operator()(const Tuple& t) const {
        size_t h = t.size();
        for (const Value& v : t) h ^= v.hash() + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        return h;
    }
};

/// Deduplicated ground tuples keyed by predicate. Ordered containers keep
/// iteration deterministic; this is the exchange type at module boundaries,
/// not the engine's working store.
class FactSet {
public:
    using Relation = std::set<Tuple, TupleLess>;

    bool insert(const std::string& pred, Tuple t) { return rels_[pred].insert(std::move(t)).second; }

    bool contains(const std::string& pred, const Tuple& t) const {
        auto it = rels_.find(pred);
        return it != rels_.end() && it->second.count(t) > 0;
    }

    const Relation& relation(const std::string& pred) const {
        static const Relation empty;
        auto it = rels_.find(pred);
        return it == rels_.end() ? empty : it->second;
    }

    bool hasPred(const std::string& pred) const { return rels_.count(pred) > 0; }

    const std::map<std::string, Relation>& relations() const { return rels_; }

    size_t totalFacts() const {
        size_t n = 0;
        for (const auto& [p, r] : rels_) n += r.size();
        return n;
    }

    void merge(const FactSet& other) {
        for (const auto& [p, r] : other.rels_) rels_[p].insert(r.begin(), r.end());
    }

    bool operator==(const FactSet& other) const { return rels_ == other.rels_; }

private:
    std::map<std::string, Relation> rels_;
};

/// Tolerant fact-set comparison: relations must match tuple-for-tuple after
/// sorting, with Float fields compared at `relTol` relative tolerance and
/// everything else exactly. When `preds` is non-empty only those predicates
/// are compared.
bool factSetsMatch(const FactSet& a, const FactSet& b, double relTol,
                   const std::set<std::string>& preds = {}, std::string* firstDiff = nullptr);

} // namespace stagelog
