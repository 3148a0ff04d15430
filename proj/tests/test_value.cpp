#include <doctest.h>

#include <algorithm>
#include <random>

#include "stagelog/ast.hpp"
#include "stagelog/value.hpp"

#include "test_util.hpp"

using namespace stagelog;
using testutil::fv;
using testutil::iv;

namespace {

Value evalWith(const Term& t, const std::vector<Value>& slots) {
    Binding b(slots.size());
    std::vector<std::string> names;
    for (size_t i = 0; i < slots.size(); ++i) {
        b.set(static_cast<int>(i), slots[i]);
        names.push_back("V" + std::to_string(i));
    }
    return evalTerm(t, b, names);
}

} // namespace

TEST_SUITE_BEGIN("value");

TEST_CASE("arithmetic over bindings") {
    // C + 1 with C = 0
    Term cPlus1 = Term::arithOf(ArithOp::Add, Term::variable(0), Term::constantOf(iv(1)));
    CHECK(evalWith(cPlus1, {iv(0)}) == iv(1));

    // Pop * Perc with the initial population
    Term popTimes = Term::arithOf(ArithOp::Mul, Term::variable(0), Term::variable(1));
    Value r = evalWith(popTimes, {iv(100000), fv(0.1)});
    CHECK(r.kind() == ValueKind::Float);
    CHECK(r.asFloat() == doctest::Approx(10000.0).epsilon(1e-12));

    // S / C with S=7, C=2 promotes to float
    Term div = Term::arithOf(ArithOp::Div, Term::variable(0), Term::variable(1));
    CHECK(evalWith(div, {iv(7), iv(2)}) == fv(3.5));
    // exact division stays integral
    CHECK(evalWith(div, {iv(6), iv(3)}) == iv(2));
}

TEST_CASE("arithmetic errors") {
    Term div = Term::arithOf(ArithOp::Div, Term::variable(0), Term::variable(1));
    CHECK_THROWS_AS(evalWith(div, {iv(1), iv(0)}), EngineError);
    CHECK_THROWS_AS(evalWith(div, {fv(1.0), fv(0.0)}), EngineError);

    Term add = Term::arithOf(ArithOp::Add, Term::variable(0), Term::variable(1));
    CHECK_THROWS_AS(evalWith(add, {iv(INT64_MAX), iv(1)}), EngineError);

    testutil::Ctx ctx;
    CHECK_THROWS_AS(evalWith(add, {ctx.sym("a"), iv(1)}), EngineError);

    // unbound variable
    Binding b(1);
    std::vector<std::string> names{"X"};
    CHECK_THROWS_AS(evalTerm(Term::variable(0), b, names), EngineError);
}

TEST_CASE("eval is pure") {
    Term t = Term::arithOf(ArithOp::Mul, Term::variable(0),
                           Term::arithOf(ArithOp::Add, Term::variable(1), Term::constantOf(iv(3))));
    Value a = evalWith(t, {iv(7), iv(5)});
    Value b = evalWith(t, {iv(7), iv(5)});
    CHECK(a == b);
}

TEST_CASE("comparisons") {
    CHECK_FALSE(compareValues(CmpOp::Gt, iv(3), iv(3)));
    CHECK(compareValues(CmpOp::Ge, iv(3), iv(3)));
    CHECK(compareValues(CmpOp::Lt, Value::makePair(fv(1.2), iv(7)), Value::makePair(fv(3.5), iv(2))));

    testutil::Ctx ctx;
    CHECK(compareValues(CmpOp::Ne, ctx.sym("a"), ctx.sym("b")));
    CHECK(compareValues(CmpOp::Lt, ctx.sym("a"), ctx.sym("b")));
    CHECK_FALSE(compareValues(CmpOp::Eq, ctx.sym("a"), ctx.sym("b")));

    // numeric mix compares by value
    CHECK(compareValues(CmpOp::Eq, iv(1), fv(1.0)));
    CHECK(compareValues(CmpOp::Lt, iv(1), fv(1.5)));

    CHECK_THROWS_AS(compareValues(CmpOp::Lt, ctx.sym("a"), iv(1)), EngineError);

    // pair ties broken by the second component
    CHECK(compareValues(CmpOp::Lt, Value::makePair(fv(1.0), iv(3)), Value::makePair(fv(1.0), iv(5))));
}

TEST_CASE("identity distinguishes int from float") {
    CHECK(iv(1) != fv(1.0));
    CHECK(iv(1) == iv(1));
    CHECK(fv(1.0) == fv(1.0));
    testutil::Ctx ctx;
    CHECK(ctx.sym("a") == ctx.sym("a"));
    CHECK(Value::makePair(iv(1), iv(2)) == Value::makePair(iv(1), iv(2)));
    CHECK(Value::makePair(iv(1), iv(2)) != Value::makePair(iv(1), iv(3)));
}

TEST_CASE("storage order is a deterministic total order") {
    testutil::Ctx ctx;
    std::mt19937 rng(42);
    std::vector<Value> values;
    for (int i = 0; i < 200; ++i) {
        switch (rng() % 4) {
            case 0: values.push_back(iv(static_cast<int64_t>(rng() % 50))); break;
            case 1: values.push_back(fv(static_cast<double>(rng() % 50) / 3.0)); break;
            case 2: values.push_back(ctx.sym(std::string(1, 'a' + rng() % 5))); break;
            default:
                values.push_back(Value::makePair(iv(static_cast<int64_t>(rng() % 5)),
                                                 iv(static_cast<int64_t>(rng() % 5))));
        }
    }
    std::vector<Value> once = values;
    std::sort(once.begin(), once.end(), storageLess);
    std::vector<Value> twice = once;
    std::sort(twice.begin(), twice.end(), storageLess); // idempotent
    for (size_t i = 0; i < once.size(); ++i) CHECK(once[i] == twice[i]);
    // shuffled input sorts to the same sequence
    std::vector<Value> shuffled = values;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    std::sort(shuffled.begin(), shuffled.end(), storageLess);
    for (size_t i = 0; i < once.size(); ++i) CHECK(once[i] == shuffled[i]);
    // strict-weak: never both a<b and b<a
    for (size_t i = 1; i < once.size(); ++i)
        CHECK_FALSE((storageLess(once[i], once[i - 1]) && storageLess(once[i - 1], once[i])));
}

TEST_CASE("float formatting round-trips") {
    double v = 133333.33333333334;
    CHECK(std::stod(formatFloat(v)) == v);
    CHECK(std::stod(formatFloat(0.1)) == 0.1);
}

TEST_SUITE_END();
