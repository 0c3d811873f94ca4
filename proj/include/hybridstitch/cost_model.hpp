// Analytical latency model for a large/small stitched run.
//
// With switch steps T_1..T_{n+1} (T_0 = 0) and mask ratios M_1..M_n (M_0 = 1):
//   large = sum_{i=1}^{n+1} (T_i - T_{i-1}) * L_l * M_{i-1}
//   small = L_s * (T - T_1)
//   savings = L_l * T - (large + small)
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hybridstitch/stitcher.hpp"

namespace hybridstitch {

class CostModelError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// 1 - L_s/L_l: a hybrid step L_l*M + L_s beats a pure large step iff M is below this.
inline double feasible_mask_bound(double latency_large, double latency_small) {
    if (!(latency_small > 0.0) || !(latency_large > latency_small) || !std::isfinite(latency_large)) {
        throw CostModelError("feasible_mask_bound: requires 0 < L_s < L_l (got L_l=" + std::to_string(latency_large) +
                             ", L_s=" + std::to_string(latency_small) + ")");
    }
    return 1.0 - latency_small / latency_large;
}

struct CostModelParams {
    double latency_large = 0.0;  // L_l, seconds per step
    double latency_small = 0.0;  // L_s, seconds per step
    std::size_t steps = 0;       // T
    std::vector<std::size_t> switch_steps;  // T_1..T_{n+1}
    std::vector<double> mask_ratios;        // M_1..M_n

    std::size_t masked_stages() const { return mask_ratios.size(); }

    /// Switch steps must be non-decreasing and at most T; two may coincide only
    /// at T, which marks transitions a run never reached.
    void validate() const {
        if (!(latency_small > 0.0) || !(latency_large > latency_small) || !std::isfinite(latency_large)) {
            throw CostModelError("constraint 0 < L_s < L_l violated (L_l=" + std::to_string(latency_large) +
                                 ", L_s=" + std::to_string(latency_small) + ")");
        }
        if (steps == 0) throw CostModelError("T must be >= 1");
        if (switch_steps.size() != mask_ratios.size() + 1) {
            throw CostModelError("need n+1 switch steps for n mask ratios (got " + std::to_string(switch_steps.size()) +
                                 " switch steps, " + std::to_string(mask_ratios.size()) + " mask ratios)");
        }
        for (std::size_t i = 0; i < switch_steps.size(); ++i) {
            if (switch_steps[i] > steps) {
                throw CostModelError("switch step T_" + std::to_string(i + 1) + "=" + std::to_string(switch_steps[i]) +
                                     " exceeds T=" + std::to_string(steps));
            }
            if (i > 0 && !(switch_steps[i] > switch_steps[i - 1] || switch_steps[i] == steps)) {
                throw CostModelError("switch steps must be strictly increasing (T_" + std::to_string(i + 1) +
                                     " <= T_" + std::to_string(i) + ")");
            }
        }
        for (std::size_t i = 0; i < mask_ratios.size(); ++i) {
            if (!(mask_ratios[i] > 0.0 && mask_ratios[i] < 1.0)) {
                throw CostModelError("mask ratio M_" + std::to_string(i + 1) + " outside (0, 1)");
            }
            if (i > 0 && !(mask_ratios[i] < mask_ratios[i - 1])) {
                throw CostModelError("mask ratios must be strictly decreasing");
            }
        }
        if (!mask_ratios.empty()) {
            const double bound = feasible_mask_bound(latency_large, latency_small);
            if (!(mask_ratios[0] < bound)) {
                throw CostModelError("M_1 < 1 - L_s/L_l violated (M_1=" + std::to_string(mask_ratios[0]) +
                                     ", bound=" + std::to_string(bound) + ")");
            }
        }
    }

    /// M_{stage} with M_0 = 1 and 0 after the last masked stage.
    double stage_ratio(std::size_t stage) const {
        if (stage == 0) return 1.0;
        return stage <= mask_ratios.size() ? mask_ratios[stage - 1] : 0.0;
    }
};

struct CostBreakdown {
    double hybrid_large = 0.0;
    double hybrid_small = 0.0;
    double total = 0.0;
    double savings = 0.0;
    double speedup_vs_large = 0.0;
};

/// Eqs. 3-5 without the invariant checks. Useful for what-if settings such as
/// FullLarge (every M_i = 1), which Eq. 7 would reject.
inline CostBreakdown evaluate_cost(const CostModelParams& p) {
    if (p.switch_steps.empty()) throw CostModelError("evaluate_cost: no switch steps");
    CostBreakdown c;
    std::size_t prev = 0;
    for (std::size_t i = 0; i < p.switch_steps.size(); ++i) {
        c.hybrid_large += static_cast<double>(p.switch_steps[i] - prev) * p.latency_large * p.stage_ratio(i);
        prev = p.switch_steps[i];
    }
    c.hybrid_small = p.latency_small * static_cast<double>(p.steps - p.switch_steps.front());
    c.total = c.hybrid_large + c.hybrid_small;
    const double pure_large = p.latency_large * static_cast<double>(p.steps);
    c.savings = pure_large - c.total;
    c.speedup_vs_large = pure_large / c.total;
    return c;
}

inline CostBreakdown predict(const CostModelParams& p) {
    p.validate();
    return evaluate_cost(p);
}

/// Observed T_1..T_{n+1} of a trace; transitions never reached map to T.
inline std::vector<std::size_t> observed_switch_steps(const std::vector<StepTrace>& traces, std::size_t masked_stages) {
    const auto entries = stage_entry_steps(traces, masked_stages + 1);
    std::vector<std::size_t> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.value_or(traces.size()));
    return out;
}

inline CostModelParams params_from_trace(const std::vector<StepTrace>& traces, const std::vector<double>& mask_ratios,
                                         double latency_large, double latency_small) {
    CostModelParams p;
    p.latency_large = latency_large;
    p.latency_small = latency_small;
    p.steps = traces.size();
    p.mask_ratios = mask_ratios;
    p.switch_steps = observed_switch_steps(traces, mask_ratios.size());
    return p;
}

struct StageValidation {
    std::size_t stage = 0;
    std::size_t steps = 0;
    double measured_s = 0.0;
    double predicted_s = 0.0;
    double relative_error = 0.0;
};

struct ValidationReport {
    enum class Status { Pass, Fail, Rejected };
    Status status = Status::Rejected;
    std::string reason;
    double tolerance = 0.0;
    double measured_total_s = 0.0;
    double predicted_total_s = 0.0;
    double relative_error = 0.0;
    double measured_speedup = 0.0;
    double predicted_speedup = 0.0;
    std::vector<std::size_t> switch_steps;
    std::vector<StageValidation> stages;

    bool passed() const { return status == Status::Pass; }
};

inline double relative_error(double measured, double predicted) {
    if (predicted == 0.0) return measured == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return std::fabs(measured - predicted) / std::fabs(predicted);
}

/// Compares the wall time recorded in `traces` with predict(params). The
/// trace's stage structure (length, switch steps, per-stage mask ratios) must
/// match params or the report is Rejected.
inline ValidationReport validate_trace(const std::vector<StepTrace>& traces, const CostModelParams& params,
                                       double tolerance) {
    ValidationReport r;
    r.tolerance = tolerance;
    auto reject = [&](std::string why) {
        r.status = ValidationReport::Status::Rejected;
        r.reason = std::move(why);
        return r;
    };
    try {
        params.validate();
    } catch (const CostModelError& e) {
        return reject(std::string("invalid cost model parameters: ") + e.what());
    }
    if (traces.size() != params.steps) {
        return reject("trace has " + std::to_string(traces.size()) + " steps, params expect T=" +
                      std::to_string(params.steps));
    }
    for (std::size_t i = 0; i < traces.size(); ++i) {
        if (traces[i].step != i) return reject("trace step " + std::to_string(i) + " is out of order");
        if (traces[i].stage > params.masked_stages() + 1) {
            return reject("trace step " + std::to_string(i) + " has stage " + std::to_string(traces[i].stage) +
                          " beyond n+1=" + std::to_string(params.masked_stages() + 1));
        }
    }
    r.switch_steps = observed_switch_steps(traces, params.masked_stages());
    if (r.switch_steps != params.switch_steps) {
        std::string obs, exp;
        for (auto s : r.switch_steps) obs += (obs.empty() ? "" : ",") + std::to_string(s);
        for (auto s : params.switch_steps) exp += (exp.empty() ? "" : ",") + std::to_string(s);
        return reject("switch steps mismatch: trace shows [" + obs + "], params give [" + exp + "]");
    }
    for (const auto& t : traces) {
        const double expect = t.stage == 0 ? 0.0 : (t.stage <= params.masked_stages() ? params.stage_ratio(t.stage) : 0.0);
        if (std::fabs(t.mask_ratio - expect) > 1e-12) {
            return reject("step " + std::to_string(t.step) + " mask ratio " + format_g6(t.mask_ratio) +
                          " does not match M_" + std::to_string(t.stage) + "=" + format_g6(expect));
        }
    }

    const CostBreakdown predicted = predict(params);
    r.stages.resize(params.masked_stages() + 2);
    for (std::size_t s = 0; s < r.stages.size(); ++s) r.stages[s].stage = s;
    for (const auto& t : traces) {
        auto& st = r.stages[t.stage];
        ++st.steps;
        st.measured_s += (t.wall_ms_large + t.wall_ms_small) * 1e-3;
    }
    for (auto& st : r.stages) {
        const double small = st.stage == 0 ? 0.0 : params.latency_small;
        st.predicted_s = static_cast<double>(st.steps) * (params.latency_large * params.stage_ratio(st.stage) + small);
        st.relative_error = relative_error(st.measured_s, st.predicted_s);
        r.measured_total_s += st.measured_s;
    }
    r.predicted_total_s = predicted.total;
    r.relative_error = relative_error(r.measured_total_s, r.predicted_total_s);
    const double pure_large = params.latency_large * static_cast<double>(params.steps);
    r.predicted_speedup = predicted.speedup_vs_large;
    r.measured_speedup = r.measured_total_s > 0.0 ? pure_large / r.measured_total_s : 0.0;
    r.status = r.relative_error <= tolerance ? ValidationReport::Status::Pass : ValidationReport::Status::Fail;
    if (!r.passed()) r.reason = "relative error exceeds tolerance";
    return r;
}

inline std::string to_key_value_text(const ValidationReport& r) {
    auto num = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.12g", v);
        return std::string(buf);
    };
    std::ostringstream os;
    const char* status = r.status == ValidationReport::Status::Pass   ? "pass"
                         : r.status == ValidationReport::Status::Fail ? "fail"
                                                                      : "rejected";
    os << "status=" << status << '\n';
    if (!r.reason.empty()) os << "reason=" << r.reason << '\n';
    os << "tolerance=" << num(r.tolerance) << '\n';
    if (r.status == ValidationReport::Status::Rejected) return os.str();
    std::string steps;
    for (auto s : r.switch_steps) steps += (steps.empty() ? "" : ",") + std::to_string(s);
    os << "switch_steps=" << steps << '\n';
    os << "measured_total_s=" << num(r.measured_total_s) << '\n';
    os << "predicted_total_s=" << num(r.predicted_total_s) << '\n';
    os << "relative_error=" << num(r.relative_error) << '\n';
    os << "measured_speedup=" << num(r.measured_speedup) << '\n';
    os << "predicted_speedup=" << num(r.predicted_speedup) << '\n';
    for (const auto& st : r.stages) {
        const std::string p = "stage_" + std::to_string(st.stage) + "_";
        os << p << "steps=" << st.steps << '\n';
        os << p << "measured_s=" << num(st.measured_s) << '\n';
        os << p << "predicted_s=" << num(st.predicted_s) << '\n';
        os << p << "relative_error=" << num(st.relative_error) << '\n';
    }
    return os.str();
}

}  // namespace hybridstitch
