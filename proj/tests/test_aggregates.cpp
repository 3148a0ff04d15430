#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "stagelog/aggregates.hpp"
#include "stagelog/oracle.hpp"

#include "test_util.hpp"

using namespace stagelog;
using testutil::fv;
using testutil::iv;

TEST_SUITE_BEGIN("aggregates");

TEST_CASE("count accumulates one per contribution") {
    testutil::Ctx ctx;
    Accumulator acc(AggKind::Count);
    acc.accumulate(ctx.sym("a"));
    acc.accumulate(ctx.sym("b"));
    acc.accumulate(ctx.sym("c"));
    CHECK(acc.count() == 3);
    CHECK(acc.finalize() == iv(3));
}

TEST_CASE("sum running states are order independent at the end") {
    // {2,5}: the running value passes through 2 or 5, both orders end at 7
    Accumulator a(AggKind::Sum);
    a.accumulate(iv(2));
    CHECK(a.finalize() == iv(2));
    a.accumulate(iv(5));
    CHECK(a.finalize() == iv(7));

    Accumulator b(AggKind::Sum);
    b.accumulate(iv(5));
    CHECK(b.finalize() == iv(5));
    b.accumulate(iv(2));
    CHECK(b.finalize() == iv(7));

    CHECK(a.finalize() == oracle::permFinalSum({iv(2), iv(5)}));
}

TEST_CASE("max agrees with the permutation oracle on every order") {
    std::vector<Value> vals{iv(3), iv(9), iv(4)};
    Value expected = oracle::permFinalMax(vals);
    CHECK(expected == iv(9));
    std::sort(vals.begin(), vals.end(), storageLess);
    do {
        Accumulator acc(AggKind::Max);
        for (const Value& v : vals) acc.accumulate(v);
        CHECK(acc.finalize() == expected);
    } while (std::next_permutation(vals.begin(), vals.end(), storageLess));
}

TEST_CASE("finalize per kind") {
    Accumulator avg(AggKind::Avg);
    avg.accumulate(iv(2));
    avg.accumulate(iv(5));
    CHECK(avg.finalize() == fv(3.5));
    CHECK(avg.finalize() == oracle::permFinalAvg({iv(2), iv(5)}));

    Accumulator mn(AggKind::Min);
    mn.accumulate(Value::makePair(fv(3.5), iv(2)));
    mn.accumulate(Value::makePair(fv(1.2), iv(7)));
    CHECK(mn.finalize() == Value::makePair(fv(1.2), iv(7)));
}

TEST_CASE("empty group errors") {
    CHECK_THROWS_AS(Accumulator(AggKind::Min).finalize(), EngineError);
    CHECK_THROWS_AS(Accumulator(AggKind::Max).finalize(), EngineError);
    CHECK_THROWS_AS(Accumulator(AggKind::Avg).finalize(), EngineError);
    // count and sum of nothing are well-defined (the engine never asks)
    CHECK(Accumulator(AggKind::Count).finalize() == iv(0));
    CHECK(Accumulator(AggKind::Sum).finalize() == iv(0));
}

TEST_CASE("type errors") {
    testutil::Ctx ctx;
    Accumulator sum(AggKind::Sum);
    CHECK_THROWS_AS(sum.accumulate(ctx.sym("a")), EngineError);
    Accumulator sum2(AggKind::Sum);
    sum2.accumulate(iv(INT64_MAX));
    CHECK_THROWS_AS(sum2.accumulate(iv(1)), EngineError);
}

TEST_CASE("encd/decd round trip and ordering") {
    Value p = encd(fv(3.5), iv(2));
    auto [d, id] = decd(p);
    CHECK(d == fv(3.5));
    CHECK(id == iv(2));

    // ties on the distance break toward the smaller id
    Accumulator m1(AggKind::Min);
    m1.accumulate(encd(fv(1.0), iv(5)));
    m1.accumulate(encd(fv(1.0), iv(3)));
    CHECK(m1.finalize() == encd(fv(1.0), iv(3)));

    // otherwise the smaller distance wins
    Accumulator m2(AggKind::Min);
    m2.accumulate(encd(fv(2.0), iv(1)));
    m2.accumulate(encd(fv(1.5), iv(9)));
    CHECK(m2.finalize() == encd(fv(1.5), iv(9)));

    CHECK_THROWS_AS(decd(iv(3)), EngineError);
}

TEST_CASE("order independence, exhaustively over small sets") {
    std::mt19937 rng(7);
    for (int round = 0; round < 40; ++round) {
        size_t n = 1 + rng() % 6;
        std::set<int64_t> distinct;
        while (distinct.size() < n) distinct.insert(static_cast<int64_t>(rng() % 200) - 100);
        std::vector<Value> vals;
        for (int64_t x : distinct) vals.push_back(iv(x));

        for (AggKind kind :
             {AggKind::Count, AggKind::Sum, AggKind::Avg, AggKind::Min, AggKind::Max}) {
            Accumulator ref(kind);
            for (const Value& v : vals) ref.accumulate(v);
            Value expected = ref.finalize();
            std::vector<Value> perm = vals;
            std::sort(perm.begin(), perm.end(), storageLess);
            do {
                Accumulator acc(kind);
                for (const Value& v : perm) acc.accumulate(v);
                CHECK(acc.finalize() == expected);
            } while (std::next_permutation(perm.begin(), perm.end(), storageLess));
        }
    }
}

TEST_CASE("order independence for float sums within tolerance") {
    std::mt19937 rng(11);
    std::vector<Value> vals;
    for (int i = 0; i < 6; ++i)
        vals.push_back(fv((static_cast<double>(rng() % 1000) + 0.25) / 7.0));
    Accumulator ref(AggKind::Sum);
    for (const Value& v : vals) ref.accumulate(v);
    double expected = ref.finalize().asFloat();
    std::sort(vals.begin(), vals.end(), storageLess);
    do {
        Accumulator acc(AggKind::Sum);
        for (const Value& v : vals) acc.accumulate(v);
        CHECK(acc.finalize().asFloat() == doctest::Approx(expected).epsilon(1e-9));
    } while (std::next_permutation(vals.begin(), vals.end(), storageLess));
}

TEST_CASE("continuous count passes through every value up to n") {
    testutil::Ctx ctx;
    Accumulator acc(AggKind::Count);
    std::set<int64_t> seen;
    for (int i = 0; i < 5; ++i) {
        acc.accumulate(ctx.sym(std::string(1, 'a' + i)));
        seen.insert(acc.finalize().asInt());
    }
    CHECK(seen == std::set<int64_t>{1, 2, 3, 4, 5});
}

TEST_CASE("extrema are idempotent under re-accumulation") {
    Accumulator acc(AggKind::Max);
    acc.accumulate(iv(4));
    acc.accumulate(iv(9));
    Value before = acc.finalize();
    acc.accumulate(iv(9)); // dedup bypassed on purpose
    CHECK(acc.finalize() == before);
}

TEST_CASE("mixed int/float sums promote") {
    Accumulator acc(AggKind::Sum);
    acc.accumulate(iv(2));
    acc.accumulate(fv(0.5));
    CHECK(acc.finalize() == fv(2.5));
}

TEST_SUITE_END();
