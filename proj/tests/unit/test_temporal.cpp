#include <gtest/gtest.h>

#include <cmath>

#include "memo/error.hpp"
#include "memo/temporal.hpp"
#include "oracles.hpp"

namespace {

using namespace memo::temporal;
using memo::Rng;
using memo::ad::Tensor;
using memo::data::CheckinEvent;
using Vec = std::vector<double>;

Vec vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Vec matvec(const Tensor& w, const Vec& x) {
    Vec out(w.rows(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) out[i] += w.at(i, j) * x[j];
    return out;
}

Vec embed(double delta, const Tensor& s, const Tensor& l, double theta) {
    Vec v = vec(delta < theta ? s : l);
    for (auto& x : v) x = x * x + std::tanh(x);
    return v;
}

Vec cell(const std::vector<Tensor>& w, const Vec& self, const Vec& other, const Vec& zt, const Vec& zd) {
    Vec out(self.size(), 0.0);
    const Vec parts[] = {matvec(w[0], self), matvec(w[1], other), matvec(w[2], zt), matvec(w[3], zd)};
    for (const auto& p : parts)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i];
    for (auto& x : out) x = std::tanh(x);
    return out;
}

TemporalParams random_params(Rng& rng, std::size_t d, double theta_t = 50.0, double theta_d = 2000.0) {
    return TemporalParams::init(d, theta_t, theta_d, rng, RecurrentInit::Glorot);
}

void expect_same(const Tensor& a, const Tensor& b) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]) << i;
}

TEST(Interval, PicksShortOrLongVector) {
    const Tensor s = Tensor::vector({0.5, -1.0}), l = Tensor::vector({2.0, 0.0});
    const auto near = interval_embedding(10.0, s, l, 60.0);
    EXPECT_DOUBLE_EQ(near[0], 0.25 + std::tanh(0.5));
    EXPECT_DOUBLE_EQ(near[1], 1.0 + std::tanh(-1.0));
    const auto at = interval_embedding(60.0, s, l, 60.0);
    EXPECT_DOUBLE_EQ(at[0], 4.0 + std::tanh(2.0));
    EXPECT_DOUBLE_EQ(at[1], 0.0);
    EXPECT_DOUBLE_EQ(interval_embedding(0.0, s, l, 60.0)[0], near[0]);
    EXPECT_THROW(interval_embedding(-1.0, s, l, 60.0), memo::ContractError);
    EXPECT_THROW(interval_embedding(1.0, s, l, 0.0), memo::ContractError);
}

TEST(Cells, UserUpdateMatchesFormula) {
    Rng rng(1);
    const auto p = random_params(rng, 4);
    const Tensor hu = memo::testing::random_leaf(rng, {4}), hl = memo::testing::random_leaf(rng, {4});
    const Tensor zt = memo::testing::random_leaf(rng, {4}), zd = memo::testing::random_leaf(rng, {4});
    const auto got = update_user(hu, hl, zt, zd, p);
    const Vec want = cell(p.user, vec(hu), vec(hl), vec(zt), vec(zd));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(got[i], want[i], 1e-14);
    const auto sig = update_user(hu, hl, zt, zd, p, Activation::Sigmoid);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(sig[i], 0.5 * (1.0 + std::tanh(std::atanh(want[i]) / 2.0)), 1e-12);
}

TEST(Cells, PoiUpdateFoldsVisitorsInOrder) {
    Rng rng(2);
    const auto p = random_params(rng, 3);
    Vec h = memo::testing::random_values(rng, 3);
    const Tensor h0 = Tensor::vector(h);
    std::vector<Visitor> visitors;
    for (int k = 0; k < 4; ++k)
        visitors.push_back({memo::testing::random_leaf(rng, {3}), memo::testing::random_leaf(rng, {3}),
                            memo::testing::random_leaf(rng, {3})});
    std::size_t steps = 0;
    const auto got = update_poi(h0, visitors, p, Activation::Tanh, &steps);
    EXPECT_EQ(steps, 4u);
    for (const auto& v : visitors) h = cell(p.poi, h, vec(v.h_u), vec(v.z_t), vec(v.z_d));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(got[i], h[i], 1e-14);
    expect_same(update_poi(h0, {}, p), h0);
}

TEST(Params, IdentityLayout) {
    Rng rng(3);
    const auto p = TemporalParams::init(5, 3600, 200, rng, RecurrentInit::Identity, 1.5);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            const double diag = i == j ? 1.5 : 0.0;
            EXPECT_EQ(p.user[0].at(i, j), i < 3 ? diag : 0.0);
            EXPECT_EQ(p.user[1].at(i, j), i >= 3 ? diag : 0.0);
            EXPECT_EQ(p.poi[0].at(i, j), diag);
            for (int k : {2, 3}) EXPECT_EQ(p.user[k].at(i, j), 0.0);
            for (int k : {1, 2, 3}) EXPECT_EQ(p.poi[k].at(i, j), 0.0);
        }
    // Interval vectors are drawn from the same stream either way.
    Rng a(9), b(9);
    const auto g = TemporalParams::init(4, 3600, 200, a, RecurrentInit::Glorot);
    const auto i = TemporalParams::init(4, 3600, 200, b, RecurrentInit::Identity);
    expect_same(g.time_short, i.time_short);
    expect_same(g.dist_long, i.dist_long);
    EXPECT_THROW(TemporalParams::init(4, 3600, 200, a, RecurrentInit::Identity, 0.0), memo::ContractError);
}

TEST(Params, ValidationAndCollection) {
    Rng rng(4);
    EXPECT_THROW(TemporalParams::init(3, 0.0, 200, rng), memo::ContractError);
    EXPECT_THROW(TemporalParams::init(3, 3600, -1.0, rng), memo::ContractError);
    auto p = random_params(rng, 3);
    memo::ParamList list;
    p.collect(list);
    EXPECT_EQ(list.size(), 12u);
    p.user[2] = memo::testing::random_leaf(rng, {3, 2});
    EXPECT_THROW(p.validate(), memo::DimensionError);
}

TEST(TBatch, HandExample) {
    const std::vector<CheckinEvent> ev{{0, 0, 1, 0}, {1, 1, 1, 0}, {0, 1, 2, 0}, {2, 2, 2, 0}, {1, 0, 3, 0},
                                       {2, 2, 4, 0}};
    const auto plan = plan_tbatches(ev);
    EXPECT_EQ(plan.batch_of, (std::vector<std::size_t>{0, 0, 1, 0, 1, 1}));
    EXPECT_EQ(plan.batches, (std::vector<std::vector<std::size_t>>{{0, 1, 3}, {2, 4, 5}}));
    EXPECT_NO_THROW(validate_plan(plan, ev));
    EXPECT_TRUE(plan_tbatches({}).batches.empty());
}

TEST(TBatch, RandomStreamsSatisfyInvariants) {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const auto ev = memo::testing::random_stream(rng, 1 + trial % 120, 1 + trial % 9, 1 + trial % 7, 40);
        const auto plan = plan_tbatches(ev);
        ASSERT_NO_THROW(validate_plan(plan, ev));
        // Greedy assignment recomputed from scratch.
        for (std::size_t i = 0; i < ev.size(); ++i) {
            std::size_t want = 0;
            for (std::size_t j = 0; j < i; ++j)
                if (ev[j].user == ev[i].user || ev[j].poi == ev[i].poi) want = std::max(want, plan.batch_of[j] + 1);
            ASSERT_EQ(plan.batch_of[i], want);
        }
    }
}

TEST(TBatch, RejectsUnsortedInput) {
    const std::vector<CheckinEvent> ev{{0, 0, 5, 0}, {1, 1, 3, 0}};
    EXPECT_THROW(plan_tbatches(ev), memo::ContractError);
}

TEST(TBatch, ValidatorCatchesBrokenPlans) {
    const std::vector<CheckinEvent> ev{{0, 0, 1, 0}, {0, 1, 2, 0}, {1, 1, 3, 0}};
    auto plan = plan_tbatches(ev);
    ASSERT_NO_THROW(validate_plan(plan, ev));
    auto shared = plan;
    shared.batches = {{0, 1}, {2}};
    EXPECT_THROW(validate_plan(shared, ev), memo::ContractError);
    auto missing = plan;
    missing.batches = {{0}, {1}};
    EXPECT_THROW(validate_plan(missing, ev), memo::ContractError);
    auto twice = plan;
    twice.batches = {{0}, {1}, {1, 2}};
    EXPECT_THROW(validate_plan(twice, ev), memo::ContractError);
    auto reversed = plan;
    reversed.batches = {{1}, {0}, {2}};
    EXPECT_THROW(validate_plan(reversed, ev), memo::ContractError);
    auto out_of_range = plan;
    out_of_range.batches = {{0}, {1}, {7}};
    EXPECT_THROW(validate_plan(out_of_range, ev), memo::ContractError);
}

TEST(State, FallsBackToBaseRows) {
    Rng rng(6);
    const Tensor base = memo::testing::random_leaf(rng, {5, 2});
    DynamicState s(base, 2, 3);
    EXPECT_EQ(s.num_users(), 2u);
    EXPECT_EQ(s.num_pois(), 3u);
    EXPECT_FALSE(s.user_touched(1));
    EXPECT_EQ(s.user(1)[0], base.at(1, 0));
    EXPECT_EQ(s.poi(2)[1], base.at(4, 1));
    s.set_poi(2, Tensor::vector({7.0, 8.0}));
    EXPECT_TRUE(s.poi_touched(2));
    EXPECT_EQ(s.poi(2)[0], 7.0);
    const Tensor other = memo::testing::random_leaf(rng, {5, 2});
    s.rebase(other);
    EXPECT_EQ(s.user(0)[0], other.at(0, 0));
    EXPECT_EQ(s.poi(2)[0], 7.0);
    EXPECT_THROW(s.rebase(memo::testing::random_leaf(rng, {4, 2})), memo::DimensionError);
    EXPECT_THROW(DynamicState(base, 2, 2), memo::DimensionError);
    EXPECT_THROW(s.user(2), std::out_of_range);
}

TEST(State, DetachCutsHistory) {
    Rng rng(7);
    const Tensor base = memo::testing::random_leaf(rng, {3, 2});
    DynamicState s(base, 1, 2);
    memo::ad::Tape tape;
    memo::ad::TapeScope scope(tape);
    s.set_user(0, memo::ad::tanh(s.user(0)));
    EXPECT_TRUE(s.user(0).requires_grad());
    s.detach();
    EXPECT_FALSE(s.user(0).requires_grad());
    EXPECT_EQ(s.user(0)[0], std::tanh(base.at(0, 0)));
}

TEST(State, IntervalsSincePreviousVisit) {
    const std::vector<memo::data::Poi> pois{{0, -76.6, 39.3}, {1, -76.6, 39.31}};
    DynamicState s(Tensor::zeros({3, 2}), 1, 2);
    const auto first = intervals_for(s, {0, 1, 100, 0}, pois);
    EXPECT_EQ(first.dt, 0.0);
    EXPECT_EQ(first.dd, 0.0);
    s.set_last_visit(0, {40, pois[0].coords()});
    const auto iv = intervals_for(s, {0, 1, 100, 0}, pois);
    EXPECT_EQ(iv.dt, 60.0);
    EXPECT_NEAR(iv.dd, memo::geo::haversine_m(pois[0].coords(), pois[1].coords()), 1e-9);
    EXPECT_THROW(intervals_for(s, {0, 1, 10, 0}, pois), memo::ContractError);
}

struct Fixture {
    std::vector<memo::data::Poi> pois;
    std::vector<CheckinEvent> events;
    TemporalParams params;
    Tensor base;
    std::size_t users = 0;
};

Fixture random_fixture(Rng& rng, std::size_t n, std::size_t users, std::size_t pois, std::size_t d) {
    Fixture f;
    f.users = users;
    f.pois = memo::testing::random_pois(rng, pois);
    f.events = memo::testing::random_stream(rng, n, users, pois, 300);
    f.params = random_params(rng, d);
    f.base = memo::testing::random_leaf(rng, {users + pois, d});
    return f;
}

TEST(Replay, SequentialMatchesLoopReference) {
    Rng rng(8);
    auto f = random_fixture(rng, 25, 3, 4, 3);
    std::vector<Vec> hu(3), hl(4);
    for (std::size_t u = 0; u < 3; ++u) hu[u] = vec(memo::ad::row(f.base, u));
    for (std::size_t l = 0; l < 4; ++l) hl[l] = vec(memo::ad::row(f.base, 3 + l));
    std::vector<std::optional<std::pair<std::int64_t, std::size_t>>> last(3);
    for (const auto& e : f.events) {
        double dt = 0.0, dd = 0.0;
        if (last[e.user]) {
            dt = static_cast<double>(e.time - last[e.user]->first);
            dd = memo::geo::haversine_m(f.pois[last[e.user]->second].coords(), f.pois[e.poi].coords());
        }
        const Vec zt = embed(dt, f.params.time_short, f.params.time_long, f.params.theta_t);
        const Vec zd = embed(dd, f.params.dist_short, f.params.dist_long, f.params.theta_d);
        const Vec nu = cell(f.params.user, hu[e.user], hl[e.poi], zt, zd);
        const Vec nl = cell(f.params.poi, hl[e.poi], hu[e.user], zt, zd);
        hu[e.user] = nu;
        hl[e.poi] = nl;
        last[e.user] = {e.time, e.poi};
    }
    DynamicState s(f.base, 3, 4);
    replay_sequential(f.events, f.pois, f.params, s, {});
    for (std::size_t u = 0; u < 3; ++u)
        for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(s.user(u)[k], hu[u][k], 1e-13);
    for (std::size_t l = 0; l < 4; ++l)
        for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(s.poi(l)[k], hl[l][k], 1e-13);
}

TEST(Replay, BatchedEqualsSequentialExactly) {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        auto f = random_fixture(rng, 10 + 3 * trial, 2 + trial % 5, 2 + trial % 6, 3);
        DynamicState a(f.base, f.users, f.pois.size()), b(f.base, f.users, f.pois.size());
        std::vector<std::pair<Vec, Vec>> seen_a(f.events.size()), seen_b(f.events.size());
        replay(plan_tbatches(f.events), f.events, f.pois, f.params, a, {},
               [&](std::size_t i, const Tensor& u, const Tensor& l) { seen_a[i] = {vec(u), vec(l)}; });
        replay_sequential(f.events, f.pois, f.params, b, {},
                          [&](std::size_t i, const Tensor& u, const Tensor& l) { seen_b[i] = {vec(u), vec(l)}; });
        ASSERT_EQ(seen_a, seen_b);
        for (std::size_t u = 0; u < f.users; ++u) {
            expect_same(a.user(u), b.user(u));
            ASSERT_EQ(a.last_visit(u).has_value(), b.last_visit(u).has_value());
            if (a.last_visit(u)) {
                EXPECT_EQ(a.last_visit(u)->time, b.last_visit(u)->time);
            }
        }
        for (std::size_t l = 0; l < f.pois.size(); ++l) expect_same(a.poi(l), b.poi(l));
    }
}

TEST(Replay, DisabledIntervalsEqualZeroEmbeddings) {
    Rng rng(10);
    auto f = random_fixture(rng, 30, 3, 3, 4);
    DynamicState a(f.base, 3, 3), b(f.base, 3, 3);
    replay_sequential(f.events, f.pois, f.params, a, {false, Activation::Tanh});
    auto zeroed = f.params;
    for (auto* v : {&zeroed.time_short, &zeroed.time_long, &zeroed.dist_short, &zeroed.dist_long})
        *v = Tensor::zeros({4});
    replay_sequential(f.events, f.pois, zeroed, b, {});
    for (std::size_t u = 0; u < 3; ++u) expect_same(a.user(u), b.user(u));
}

TEST(Replay, Errors) {
    Rng rng(11);
    auto f = random_fixture(rng, 5, 2, 2, 2);
    DynamicState s(f.base, 2, 2);
    auto bad = f.events;
    bad[0].poi = 5;
    EXPECT_THROW(replay_sequential(bad, f.pois, f.params, s, {}), memo::RangeError);
    TBatchPlan wrong;
    EXPECT_THROW(replay(wrong, f.events, f.pois, f.params, s, {}), memo::ContractError);
}

TEST(Replay, GradientsMatchFiniteDifferences) {
    Rng rng(12);
    auto f = random_fixture(rng, 8, 4, 3, 3);
    const auto plan = plan_tbatches(f.events);
    ASSERT_GE(plan.batches.size(), 2u);
    memo::ParamList list{{"base", f.base}};
    f.params.collect(list);
    const Tensor probe = memo::testing::random_leaf(rng, {3}, -1, 1).detach();
    const auto checks = memo::testing::check_gradients(list, [&] {
        DynamicState s(f.base, 4, 3);
        replay(plan, f.events, f.pois, f.params, s, {});
        std::vector<Tensor> terms;
        for (std::size_t u = 0; u < 4; ++u) terms.push_back(memo::ad::dot(s.user(u), probe));
        for (std::size_t l = 0; l < 3; ++l) terms.push_back(memo::ad::dot(s.poi(l), probe));
        return memo::ad::add_n(terms);
    });
    for (const auto& c : checks) EXPECT_TRUE(c.rel_error < 1e-5 || c.numeric_norm < 1e-9) << c.name << " " << c.rel_error;
}

}  // namespace
