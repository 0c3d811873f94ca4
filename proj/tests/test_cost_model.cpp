#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "hybridstitch/cost_model.hpp"

using namespace hybridstitch;

namespace {

constexpr double kLl = 0.4144;  // 20.72 s / 50 steps
constexpr double kLs = 0.1154;  // from 14.74 = 20 * L_s + 30 * L_l

CostModelParams table_one() {
    CostModelParams p;
    p.latency_large = kLl;
    p.latency_small = kLs;
    p.steps = 50;
    p.switch_steps = {10, 20};
    p.mask_ratios = {0.3};
    return p;
}

// Random valid params with n masked stages.
CostModelParams random_params(std::mt19937_64& gen) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    CostModelParams p;
    p.latency_large = 0.01 + u(gen);
    p.latency_small = p.latency_large * (0.05 + 0.9 * u(gen));
    p.steps = 5 + gen() % 60;
    const std::size_t n = gen() % 4;
    const double bound = feasible_mask_bound(p.latency_large, p.latency_small);
    double m = bound * (0.05 + 0.9 * u(gen));
    for (std::size_t i = 0; i < n; ++i) {
        p.mask_ratios.push_back(m);
        m *= 0.2 + 0.7 * u(gen);
    }
    std::vector<std::size_t> steps;
    std::size_t s = 0;
    for (std::size_t i = 0; i <= n; ++i) {
        const std::size_t room = p.steps - s;
        s = std::min(p.steps, s + 1 + gen() % std::max<std::size_t>(1, room / (n + 1 - i)));
        steps.push_back(s);
    }
    p.switch_steps = steps;
    return p;
}

// Hand-rolled Eq. 3-4, independent of the library's loop.
double oracle_total(const CostModelParams& p) {
    double large = static_cast<double>(p.switch_steps[0]) * p.latency_large;
    for (std::size_t i = 1; i < p.switch_steps.size(); ++i) {
        large += static_cast<double>(p.switch_steps[i] - p.switch_steps[i - 1]) * p.latency_large * p.mask_ratios[i - 1];
    }
    return large + p.latency_small * static_cast<double>(p.steps - p.switch_steps[0]);
}

}  // namespace

TEST(PredictTest, TableOneRegression) {
    const auto c = predict(table_one());
    EXPECT_NEAR(c.hybrid_large, 5.3872, 1e-12);
    EXPECT_NEAR(c.hybrid_small, 4.616, 1e-12);
    EXPECT_NEAR(c.total, 10.0032, 1e-12);
    EXPECT_NEAR(c.speedup_vs_large, 20.72 / 10.0032, 1e-12);
    EXPECT_NEAR(c.speedup_vs_large, 2.07, 0.005);
    EXPECT_NEAR(c.savings, 20.72 - 10.0032, 1e-12);
}

TEST(PredictTest, NoSwitchIsPureLarge) {
    CostModelParams p;
    p.latency_large = kLl;
    p.latency_small = kLs;
    p.steps = 50;
    p.switch_steps = {50};
    const auto c = predict(p);
    EXPECT_DOUBLE_EQ(c.total, 50 * kLl);
    EXPECT_DOUBLE_EQ(c.speedup_vs_large, 1.0);
    EXPECT_DOUBLE_EQ(c.hybrid_small, 0.0);
}

TEST(PredictTest, MatchesOracleAndInvariants) {
    std::mt19937_64 gen(17);
    for (int rep = 0; rep < 500; ++rep) {
        const auto p = random_params(gen);
        const auto c = predict(p);
        EXPECT_NEAR(c.total, oracle_total(p), 1e-12 * oracle_total(p));
        EXPECT_DOUBLE_EQ(c.total, c.hybrid_large + c.hybrid_small);
        EXPECT_DOUBLE_EQ(c.savings, p.latency_large * static_cast<double>(p.steps) - c.total);
    }
}

TEST(PredictTest, LinearInEachLatency) {
    std::mt19937_64 gen(3);
    for (int rep = 0; rep < 200; ++rep) {
        const auto p = random_params(gen);
        const auto c = predict(p);
        CostModelParams q = p;
        q.latency_large *= 2.5;
        q.latency_small *= 2.5;
        const auto d = predict(q);
        EXPECT_NEAR(d.hybrid_large, 2.5 * c.hybrid_large, 1e-12 * d.total);
        EXPECT_NEAR(d.hybrid_small, 2.5 * c.hybrid_small, 1e-12 * d.total);
        // hybrid_large depends on L_l only, hybrid_small on L_s only.
        CostModelParams r = p;
        r.latency_small *= 0.5;
        EXPECT_DOUBLE_EQ(predict(r).hybrid_large, c.hybrid_large);
        EXPECT_DOUBLE_EQ(predict(r).hybrid_small, 0.5 * c.hybrid_small);
    }
}

TEST(PredictTest, EarlierFirstSwitchNeverCostsMore) {
    CostModelParams p = table_one();
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t t1 = 19; t1 >= 1; --t1) {
        p.switch_steps = {t1, 20};
        const double total = predict(p).total;
        EXPECT_LT(total, prev) << "T_1=" << t1;
        prev = total;
    }
}

TEST(PredictTest, FullLargeAnalogue) {
    CostModelParams p = table_one();
    p.mask_ratios = {1.0};
    p.switch_steps = {10, 50};
    EXPECT_THROW(predict(p), CostModelError);
    EXPECT_DOUBLE_EQ(evaluate_cost(p).total, kLl * 50 + kLs * 40);
}

TEST(PredictTest, SavingsPositiveWhenFeasible) {
    std::mt19937_64 gen(8);
    for (int rep = 0; rep < 500; ++rep) {
        const auto p = random_params(gen);
        if (p.switch_steps[0] < p.steps) {
            EXPECT_GT(predict(p).savings, 0.0);
        }
    }
}

TEST(PredictTest, RejectsBrokenInvariants) {
    CostModelParams p = table_one();
    p.mask_ratios = {0.72};
    EXPECT_NO_THROW(predict(p));
    p.mask_ratios = {0.73};
    try {
        predict(p);
        FAIL();
    } catch (const CostModelError& e) {
        EXPECT_NE(std::string(e.what()).find("M_1 < 1 - L_s/L_l"), std::string::npos);
    }
    p = table_one();
    p.latency_small = p.latency_large;
    EXPECT_THROW(predict(p), CostModelError);
    p = table_one();
    p.switch_steps = {20, 10};
    EXPECT_THROW(predict(p), CostModelError);
    p = table_one();
    p.switch_steps = {10, 60};
    EXPECT_THROW(predict(p), CostModelError);
    p = table_one();
    p.switch_steps = {10};
    EXPECT_THROW(predict(p), CostModelError);
    p = table_one();
    p.switch_steps = {10, 20, 30};
    p.mask_ratios = {0.3, 0.4};
    EXPECT_THROW(predict(p), CostModelError);
}

TEST(FeasibleBoundTest, Examples) {
    EXPECT_DOUBLE_EQ(feasible_mask_bound(2.0, 1.0), 0.5);
    EXPECT_NEAR(feasible_mask_bound(kLl, kLs), 0.7215, 5e-5);
    EXPECT_THROW(feasible_mask_bound(1.0, 1.0), CostModelError);
    EXPECT_THROW(feasible_mask_bound(1.0, 0.0), CostModelError);
}

TEST(FeasibleBoundTest, MonotoneAndMatchesPerStepBenefit) {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 2000; ++rep) {
        const double ll = 0.001 + 10.0 * u(gen);
        const double a = ll * u(gen), b = ll * u(gen);
        if (a <= 0.0 || b <= 0.0 || a == b) continue;
        const double lo = std::min(a, b), hi = std::max(a, b);
        EXPECT_GT(feasible_mask_bound(ll, lo), feasible_mask_bound(ll, hi));
        const double bound = feasible_mask_bound(ll, lo);
        const double m = u(gen);
        // Eq. 6: one hybrid step beats a large step iff M is below the bound.
        if (std::fabs(m - bound) > 1e-9) {
            EXPECT_EQ(ll * m + lo < ll, m < bound);
        }
    }
}

// --- validate_trace -------------------------------------------------------------

namespace {

std::vector<StepTrace> synthetic_trace(const CostModelParams& p) {
    std::vector<StepTrace> traces;
    std::size_t stage = 0;
    for (std::size_t t = 0; t < p.steps; ++t) {
        while (stage < p.switch_steps.size() && p.switch_steps[stage] <= t) ++stage;
        StepTrace s;
        s.step = t;
        s.stage = stage;
        const bool masked = stage >= 1 && stage <= p.masked_stages();
        s.mask_ratio = masked ? p.mask_ratios[stage - 1] : 0.0;
        s.wall_ms_large = 1e3 * p.latency_large * p.stage_ratio(stage);
        s.wall_ms_small = stage == 0 ? 0.0 : 1e3 * p.latency_small;
        traces.push_back(s);
    }
    return traces;
}

}  // namespace

TEST(ValidateTraceTest, ExactSimulatedTraceMatches) {
    std::mt19937_64 gen(99);
    for (int rep = 0; rep < 100; ++rep) {
        const auto p = random_params(gen);
        const auto report = validate_trace(synthetic_trace(p), p, 1e-9);
        ASSERT_EQ(report.status, ValidationReport::Status::Pass) << report.reason;
        EXPECT_LE(report.relative_error, 1e-9);
        EXPECT_EQ(report.switch_steps, p.switch_steps);
    }
}

TEST(ValidateTraceTest, RejectsMismatchedSwitchSteps) {
    const auto p = table_one();
    CostModelParams other = p;
    other.switch_steps = {11, 20};
    const auto report = validate_trace(synthetic_trace(p), other, 0.25);
    EXPECT_EQ(report.status, ValidationReport::Status::Rejected);
    EXPECT_NE(report.reason.find("switch steps mismatch"), std::string::npos);
}

TEST(ValidateTraceTest, RejectsLengthAndRatioMismatch) {
    const auto p = table_one();
    auto traces = synthetic_trace(p);
    traces.pop_back();
    EXPECT_EQ(validate_trace(traces, p, 0.25).status, ValidationReport::Status::Rejected);
    traces = synthetic_trace(p);
    traces[12].mask_ratio = 0.2;
    EXPECT_EQ(validate_trace(traces, p, 0.25).status, ValidationReport::Status::Rejected);
}

TEST(ValidateTraceTest, FailsOutsideTolerance) {
    const auto p = table_one();
    auto traces = synthetic_trace(p);
    for (auto& t : traces) t.wall_ms_large *= 1.5;
    const auto report = validate_trace(traces, p, 0.25);
    EXPECT_EQ(report.status, ValidationReport::Status::Fail);
    EXPECT_GT(report.relative_error, 0.25);
}

TEST(ValidateTraceTest, ObservedSwitchStepsFromTrace) {
    const auto p = table_one();
    const auto traces = synthetic_trace(p);
    EXPECT_EQ(observed_switch_steps(traces, 1), (std::vector<std::size_t>{10, 20}));
    // Never reaching the final stage maps T_2 to T.
    std::vector<StepTrace> short_run(traces.begin(), traces.begin() + 15);
    EXPECT_EQ(observed_switch_steps(short_run, 1), (std::vector<std::size_t>{10, 15}));
}

TEST(ValidateTraceTest, KeyValueReport) {
    const auto p = table_one();
    const auto text = to_key_value_text(validate_trace(synthetic_trace(p), p, 0.25));
    EXPECT_EQ(text.rfind("status=pass\ntolerance=0.25\nswitch_steps=10,20\n", 0), 0u) << text;
    EXPECT_NE(text.find("predicted_total_s=10.0032\n"), std::string::npos);
    EXPECT_NE(text.find("stage_2_steps=30\n"), std::string::npos);
}

TEST(ValidateTraceTest, SimulatedGenerationIsExact) {
    DenoiserConfig lc{2, 2, 16, 16, 4, 1, 3, "toy"};
    DenoiserConfig sc{1, 2, 8, 16, 4, 2, 3, "toy"};
    const Denoiser large(lc), small(sc);
    const ThresholdSchedule sched({std::numeric_limits<double>::infinity(), 0.5}, {0.3}, uniform_sigmas(10));
    GenerationOptions opt;
    opt.simulated = SimulatedLatency{kLl, kLs};
    const auto run = run_generation(large, small, sched, 1, Variant::Hybrid, opt);
    const auto params = params_from_trace(run.traces, run.mask_ratios, kLl, kLs);
    const auto report = validate_trace(run.traces, params, 1e-9);
    EXPECT_TRUE(report.passed()) << report.reason;
    EXPECT_LE(report.relative_error, 1e-9);
}
