#include "stagelog/factset.hpp"

#include <cmath>

namespace stagelog {

namespace {

bool valuesClose(const Value& x, const Value& y, double relTol) {
    if (x.kind() == ValueKind::Float || y.kind() == ValueKind::Float) {
        if (!x.isNumeric() || !y.isNumeric()) return false;
        double a = x.kind() == ValueKind::Int ? static_cast<double>(x.asInt()) : x.asFloat();
        double b = y.kind() == ValueKind::Int ? static_cast<double>(y.asInt()) : y.asFloat();
        double scale = std::max({std::fabs(a), std::fabs(b), 1.0});
        return std::fabs(a - b) <= relTol * scale;
    }
    if (x.kind() == ValueKind::Pair && y.kind() == ValueKind::Pair)
        return valuesClose(x.asPair().first, y.asPair().first, relTol) &&
               valuesClose(x.asPair().second, y.asPair().second, relTol);
    return x == y;
}

bool tuplesClose(const Tuple& a, const Tuple& b, double relTol) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (!valuesClose(a[i], b[i], relTol)) return false;
    return true;
}

std::string tupleToString(const Tuple& t) {
    std::string s = "(";
    for (size_t i = 0; i < t.size(); ++i) {
        if (i) s += ",";
        s += t[i].toString();
    }
    return s + ")";
}

} // namespace

bool factSetsMatch(const FactSet& a, const FactSet& b, double relTol,
                   const std::set<std::string>& preds, std::string* firstDiff) {
    auto report = [&](const std::string& msg) {
        if (firstDiff) *firstDiff = msg;
        return false;
    };
    std::set<std::string> names;
    for (const auto& [p, r] : a.relations())
        if ((preds.empty() || preds.count(p)) && !r.empty()) names.insert(p);
    for (const auto& [p, r] : b.relations())
        if ((preds.empty() || preds.count(p)) && !r.empty()) names.insert(p);
    for (const std::string& p : names) {
        const auto& ra = a.relation(p);
        const auto& rb = b.relation(p);
        if (ra.size() != rb.size())
            return report(p + ": " + std::to_string(ra.size()) + " vs " +
                          std::to_string(rb.size()) + " facts");
        auto ia = ra.begin();
        auto ib = rb.begin();
        for (; ia != ra.end(); ++ia, ++ib)
            if (!tuplesClose(*ia, *ib, relTol))
                return report(p + ": " + tupleToString(*ia) + " vs " + tupleToString(*ib));
    }
    return true;
}

} // namespace stagelog
