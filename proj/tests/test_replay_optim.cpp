// Parameter store, optimizer arithmetic, exploration schedule, and the
// episode replay buffer.

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "ldsa/optim.hpp"
#include "ldsa/params.hpp"
#include "ldsa/replay.hpp"
#include "ldsa/rng.hpp"

namespace {

using ldsa::Episode;
using ldsa::ParamStore;
using ldsa::ReplayBuffer;
using ldsa::Rng;
using ldsa::RmsPropConfig;

Episode make_episode(double tag, int length = 3) {
    Episode ep;
    ep.n_agents = 2;
    ep.n_actions = 3;
    ep.obs_dim = 2;
    ep.state_dim = 2;
    ep.length = length;
    ep.terminated = true;
    const std::size_t L = static_cast<std::size_t>(length);
    ep.obs.assign((L + 1) * 2 * 2, tag);
    ep.state.assign((L + 1) * 2, tag);
    ep.avail.assign((L + 1) * 2 * 3, 1);
    ep.actions.assign(L * 2, 0);
    ep.reward.assign(L, tag);
    return ep;
}

// ---------------------------------------------------------------------------
// parameter store
// ---------------------------------------------------------------------------

TEST(ParamStoreTest, RegistrationAndCounts) {
    ParamStore s;
    s.add("enc/w", {3, 4}, 3);
    s.add("enc/b", {4}, 3);
    s.add("head/w", {4, 2}, 4);
    EXPECT_EQ(s.block_count(), 3);
    EXPECT_EQ(s.param_count(), 12 + 4 + 8);
    EXPECT_TRUE(s.has("enc/w"));
    EXPECT_FALSE(s.has("enc/missing"));
    EXPECT_THROW(s.add("enc/w", {1}, 1), ldsa::ConfigError);
    EXPECT_THROW(s.at("nope"), ldsa::ConfigError);
}

TEST(ParamStoreTest, InitBoundsAndDeterminism) {
    ParamStore a, b;
    for (ParamStore* s : {&a, &b}) {
        s->add("w", {16, 16}, 16);
        s->add("b", {16}, 16);
    }
    Rng ra(ldsa::derive_seed(7, "init"));
    Rng rb(ldsa::derive_seed(7, "init"));
    a.init_uniform(ra);
    b.init_uniform(rb);
    const double bound = 1.0 / 4.0;
    for (double v : a.at("w").value) {
        EXPECT_GE(v, -bound);
        EXPECT_LE(v, bound);
    }
    EXPECT_EQ(a.flatten(), b.flatten());
    // some spread: not all identical
    std::set<double> uniq(a.at("w").value.begin(), a.at("w").value.end());
    EXPECT_GT(uniq.size(), 200u);
}

TEST(ParamStoreTest, FlattenRoundTripAndDeepCopy) {
    ParamStore s;
    s.add("w", {2, 3}, 2);
    s.add("b", {3}, 2);
    Rng rng(1);
    s.init_uniform(rng);
    auto flat = s.flatten();
    ParamStore copy = s;  // deep copy
    copy.at("w").value[0] += 1.0;
    EXPECT_NE(copy.at("w").value[0], s.at("w").value[0]);
    s.load_flat(flat);
    EXPECT_EQ(s.flatten(), flat);
    std::vector<double> wrong(5, 0.0);
    EXPECT_THROW(s.load_flat(wrong), ldsa::ShapeError);
}

TEST(ParamStoreTest, BindingAndGradCollection) {
    ParamStore s;
    s.add("w", {2, 2}, 2);
    s.add("unused", {3}, 1);
    Rng rng(2);
    s.init_uniform(rng);
    ldsa::Tape tape;
    auto bound = ldsa::bind_params(tape, s);
    ldsa::Tensor x = tape.leaf({1, 2}, std::vector<double>{1.0, 2.0});
    ldsa::Tensor y = ldsa::sum_all(ldsa::matmul(x, bound["w"]));
    tape.backward(y);
    auto grads = ldsa::collect_grads(bound, s);
    ASSERT_EQ(grads.size(), 2u);
    // d(sum(x W))/dW = x broadcast over columns
    EXPECT_DOUBLE_EQ(grads[0][0], 1.0);
    EXPECT_DOUBLE_EQ(grads[0][1], 1.0);
    EXPECT_DOUBLE_EQ(grads[0][2], 2.0);
    EXPECT_DOUBLE_EQ(grads[0][3], 2.0);
    // block off the path collects zeros
    EXPECT_EQ(grads[1], std::vector<double>(3, 0.0));
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

TEST(RmsPropTest, ZeroGradientLeavesParametersUntouched) {
    std::vector<double> p{1.0, -2.0, 3.0};
    std::vector<double> g(3, 0.0);
    std::vector<double> v(3, 0.0);
    std::vector<double> before = p;
    ldsa::rmsprop_update(p, g, v, RmsPropConfig{});
    EXPECT_EQ(p, before);
}

TEST(RmsPropTest, ConstantGradientStepMagnitudeConverges) {
    // With a constant gradient g, v -> g^2 and the step size approaches
    // lr * |g| / (|g| + eps), independent of the scale of g.
    RmsPropConfig cfg;
    for (double g0 : {0.5, 40.0, 1e-3}) {
        std::vector<double> p{0.0};
        std::vector<double> g{g0};
        std::vector<double> v{0.0};
        double prev = p[0];
        double step = 0.0;
        for (int i = 0; i < 3000; ++i) {
            ldsa::rmsprop_update(p, g, v, cfg);
            step = prev - p[0];
            prev = p[0];
        }
        const double expect = cfg.lr * g0 / (g0 + cfg.eps);
        EXPECT_NEAR(step, expect, expect * 1e-3) << "g0=" << g0;
    }
}

TEST(RmsPropTest, SingleStepClosedForm) {
    RmsPropConfig cfg;
    std::vector<double> p{1.0};
    std::vector<double> g{2.0};
    std::vector<double> v{0.0};
    ldsa::rmsprop_update(p, g, v, cfg);
    const double vexp = (1.0 - cfg.alpha) * 4.0;
    EXPECT_DOUBLE_EQ(v[0], vexp);
    EXPECT_DOUBLE_EQ(p[0], 1.0 - cfg.lr * 2.0 / (std::sqrt(vexp) + cfg.eps));
}

TEST(RmsPropTest, StoreLevelStepAndSizeChecks) {
    ParamStore s;
    s.add("w", {2}, 1);
    s.at("w").value = {1.0, 1.0};
    ldsa::RmsProp opt(s, RmsPropConfig{});
    std::vector<std::vector<double>> grads{{1.0, -1.0}};
    opt.step(s, grads);
    EXPECT_LT(s.at("w").value[0], 1.0);
    EXPECT_GT(s.at("w").value[1], 1.0);
    std::vector<std::vector<double>> wrong{{1.0, -1.0}, {0.0}};
    EXPECT_THROW(opt.step(s, wrong), ldsa::ShapeError);
}

TEST(GradClipTest, ScalesOnlyAboveThreshold) {
    std::vector<std::vector<double>> g{{3.0, 0.0}, {0.0, 4.0}};  // norm 5
    double norm = ldsa::clip_global_norm(g, 10.0);
    EXPECT_DOUBLE_EQ(norm, 5.0);
    EXPECT_DOUBLE_EQ(g[0][0], 3.0);  // untouched below threshold
    norm = ldsa::clip_global_norm(g, 2.5);
    EXPECT_DOUBLE_EQ(norm, 5.0);
    EXPECT_DOUBLE_EQ(g[0][0], 1.5);
    EXPECT_DOUBLE_EQ(g[1][1], 2.0);
    double after = ldsa::clip_global_norm(g, 10.0);
    EXPECT_NEAR(after, 2.5, 1e-12);
}

TEST(EpsilonScheduleTest, LinearDecayFrozenPoints) {
    ldsa::EpsilonSchedule eps;
    EXPECT_DOUBLE_EQ(eps.value(0), 1.0);
    EXPECT_DOUBLE_EQ(eps.value(25000), 0.525);
    EXPECT_DOUBLE_EQ(eps.value(50000), 0.05);
    EXPECT_DOUBLE_EQ(eps.value(75000), 0.05);
    EXPECT_DOUBLE_EQ(eps.value(10000), 1.0 - 0.95 * 0.2);
}

// ---------------------------------------------------------------------------
// replay buffer
// ---------------------------------------------------------------------------

TEST(ReplayBufferTest, FifoEvictionAtCapacity) {
    ReplayBuffer buf(5);
    for (int i = 0; i < 6; ++i) buf.push(make_episode(static_cast<double>(i)));
    EXPECT_EQ(buf.size(), 5u);
    // oldest (tag 0) evicted; remaining tags 1..5 in order
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_DOUBLE_EQ(buf.episode(i).reward[0], static_cast<double>(i + 1));
    }
}

TEST(ReplayBufferTest, NotReadyUntilBatchSizeReached) {
    ReplayBuffer buf(10);
    Rng rng(3);
    EXPECT_FALSE(buf.ready(4));
    EXPECT_THROW(buf.sample(4, rng), ldsa::ContractViolation);
    for (int i = 0; i < 3; ++i) buf.push(make_episode(1.0));
    EXPECT_FALSE(buf.ready(4));
    buf.push(make_episode(1.0));
    EXPECT_TRUE(buf.ready(4));
    EXPECT_NO_THROW(buf.sample(4, rng));
}

TEST(ReplayBufferTest, SamplesWithoutReplacement) {
    ReplayBuffer buf(8);
    for (int i = 0; i < 8; ++i) buf.push(make_episode(static_cast<double>(i)));
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        auto batch = buf.sample(8, rng);
        std::set<const Episode*> uniq(batch.begin(), batch.end());
        EXPECT_EQ(uniq.size(), 8u);
    }
    auto small = buf.sample(3, rng);
    std::set<const Episode*> uniq(small.begin(), small.end());
    EXPECT_EQ(uniq.size(), 3u);
}

TEST(ReplayBufferTest, SamplingIsDeterministicPerSeed) {
    ReplayBuffer buf(6);
    for (int i = 0; i < 6; ++i) buf.push(make_episode(static_cast<double>(i)));
    Rng r1(ldsa::derive_seed(9, "sample"));
    Rng r2(ldsa::derive_seed(9, "sample"));
    auto b1 = buf.sample(4, r1);
    auto b2 = buf.sample(4, r2);
    for (std::size_t i = 0; i < b1.size(); ++i) {
        EXPECT_DOUBLE_EQ(b1[i]->reward[0], b2[i]->reward[0]);
    }
}

TEST(ReplayBufferTest, EpisodeValidationCatchesMalformedStorage) {
    Episode ep = make_episode(1.0);
    ep.reward.pop_back();
    ReplayBuffer buf(4);
    EXPECT_THROW(buf.push(ep), ldsa::ShapeError);
}

TEST(ReplayBufferTest, EpisodeAccessors) {
    Episode ep = make_episode(0.0, 2);
    ep.obs[(1 * 2 + 1) * 2 + 0] = 7.0;  // t=1, agent=1, comp=0
    ep.actions[1 * 2 + 0] = 2;          // t=1, agent=0
    EXPECT_DOUBLE_EQ(ep.obs_at(1, 1)[0], 7.0);
    EXPECT_EQ(ep.action_at(1, 0), 2);
    EXPECT_EQ(ep.avail_at(2, 1).size(), 3u);
    EXPECT_DOUBLE_EQ(ep.undiscounted_return(), 0.0);
}

}  // namespace
