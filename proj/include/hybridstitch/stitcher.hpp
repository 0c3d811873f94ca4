// Region-aware large/small model stitching.
//
// Stage 0 runs the large model on the whole latent. Stages 1..n run the small
// model on the whole latent and the large model on the masked tokens only,
// completing its attention context from the previous step's K/V. Stage n+1
// runs the small model alone. A stage is left when the mean per-token relative
// L1 change between consecutive latents drops below that stage's threshold.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hybridstitch/denoiser.hpp"
#include "hybridstitch/latent.hpp"
#include "hybridstitch/tensor.hpp"

namespace hybridstitch {

class ScheduleError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericalDivergence : public std::runtime_error {
public:
    NumericalDivergence(std::size_t step, const std::string& what)
        : std::runtime_error("non-finite latent at step " + std::to_string(step) + ": " + what), step_(step) {}
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

inline std::vector<double> uniform_sigmas(std::size_t steps) {
    return std::vector<double>(steps, 1.0 / static_cast<double>(steps));
}

/// Threshold ladder, mask-ratio ladder and per-step sizes for one run.
/// thresholds[s] is the exit threshold of stage s; mask_ratios[s-1] is the
/// mask ratio used in masked stage s.
class ThresholdSchedule {
public:
    ThresholdSchedule(std::vector<double> thresholds, std::vector<double> mask_ratios, std::vector<double> sigmas,
                      std::optional<double> mask_bound = std::nullopt)
        : thresholds_(std::move(thresholds)), mask_ratios_(std::move(mask_ratios)), sigmas_(std::move(sigmas)) {
        if (thresholds_.size() != mask_ratios_.size() + 1) {
            throw ScheduleError("threshold list needs exactly one more entry than mask ratios (got " +
                                std::to_string(thresholds_.size()) + " thresholds, " +
                                std::to_string(mask_ratios_.size()) + " mask ratios)");
        }
        for (double th : thresholds_) {
            if (std::isnan(th)) throw ScheduleError("thresholds must not be NaN");
        }
        for (std::size_t i = 0; i < mask_ratios_.size(); ++i) {
            const double m = mask_ratios_[i];
            if (!(m > 0.0 && m <= 1.0)) {
                throw ScheduleError("mask ratio " + std::to_string(m) + " outside (0, 1]");
            }
            if (i > 0 && !(m < mask_ratios_[i - 1])) {
                throw ScheduleError("mask ratios must be strictly decreasing");
            }
        }
        if (mask_bound && !mask_ratios_.empty() && !(mask_ratios_[0] < *mask_bound)) {
            throw ScheduleError("first mask ratio " + std::to_string(mask_ratios_[0]) +
                                " must be below 1 - L_s/L_l = " + std::to_string(*mask_bound));
        }
        if (sigmas_.empty()) throw ScheduleError("sigma schedule must have at least one step");
        for (double s : sigmas_) {
            if (!(s > 0.0) || !std::isfinite(s)) throw ScheduleError("sigma schedule entries must be finite and > 0");
        }
    }

    const std::vector<double>& thresholds() const { return thresholds_; }
    const std::vector<double>& mask_ratios() const { return mask_ratios_; }
    const std::vector<double>& sigmas() const { return sigmas_; }
    std::size_t steps() const { return sigmas_.size(); }
    /// Number of masked stages n.
    std::size_t masked_stages() const { return mask_ratios_.size(); }
    std::size_t final_stage() const { return mask_ratios_.size() + 1; }
    bool is_masked_stage(std::size_t stage) const { return stage >= 1 && stage <= mask_ratios_.size(); }
    double ratio_for_stage(std::size_t stage) const { return is_masked_stage(stage) ? mask_ratios_[stage - 1] : 0.0; }

private:
    std::vector<double> thresholds_;
    std::vector<double> mask_ratios_;
    std::vector<double> sigmas_;
};

struct DiffResult {
    double d_t = 0.0;
    std::vector<double> per_token;
    std::size_t degenerate_tokens = 0;
};

inline constexpr double kDiffEpsilon = 1e-8;

/// per_token[i] = |prev_i - curr_i|_1 / max(|prev_i|_1, eps); d_t is their mean.
inline DiffResult diff_metric(const Grid2D& prev, const Grid2D& curr) {
    require_same_shape(prev, curr, "diff_metric");
    DiffResult r;
    r.per_token.resize(prev.rows());
    double total = 0.0;
    for (std::size_t i = 0; i < prev.rows(); ++i) {
        double num = 0.0;
        double den = 0.0;
        auto p = prev.row(i);
        auto c = curr.row(i);
        for (std::size_t j = 0; j < p.size(); ++j) {
            num += std::fabs(static_cast<double>(p[j]) - static_cast<double>(c[j]));
            den += std::fabs(static_cast<double>(p[j]));
        }
        if (den < kDiffEpsilon) {
            den = kDiffEpsilon;
            ++r.degenerate_tokens;
        }
        r.per_token[i] = num / den;
        total += r.per_token[i];
    }
    r.d_t = total / static_cast<double>(prev.rows());
    return r;
}

inline DiffResult diff_metric(const LatentGrid& prev, const LatentGrid& curr) {
    return diff_metric(prev.data, curr.data);
}

/// latent - sigma * noise, step advanced by one.
inline LatentGrid update_latent(const LatentGrid& latent, const Grid2D& noise, double sigma) {
    require_same_shape(latent.data, noise, "update_latent");
    Grid2D next = latent.data;
    const float s = static_cast<float>(sigma);
    auto out = next.values();
    auto n = noise.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= s * n[i];
    return LatentGrid(latent.side, std::move(next), latent.step + 1);
}

/// Small-model noise with the masked rows replaced by the large model's rows.
inline Grid2D combine_noise(const Grid2D& noise_small, const Grid2D& noise_large_masked, const Mask& mask) {
    if (noise_large_masked.rows() != mask.size()) {
        throw ShapeError("combine_noise: " + std::to_string(noise_large_masked.rows()) + " large rows for a mask of " +
                         std::to_string(mask.size()));
    }
    if (mask.total_tokens() != noise_small.rows()) {
        throw ShapeError("combine_noise: mask over " + std::to_string(mask.total_tokens()) + " tokens, small output " +
                         noise_small.shape());
    }
    Grid2D out = noise_small;
    scatter_rows(out, mask.indices(), noise_large_masked);
    return out;
}

inline Mask update_mask(const std::vector<double>& per_token_diff, double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0)) {
        throw std::invalid_argument("update_mask: ratio " + std::to_string(ratio) + " outside (0, 1]");
    }
    const std::size_t k = mask_token_count(ratio, per_token_diff.size());
    return Mask(topk_indices(per_token_diff, k), per_token_diff.size(), ratio);
}

struct DiffRecord {
    std::size_t step = 0;
    double d_t = 0.0;
    std::size_t stage = 0;
};

struct StitchState {
    std::size_t stage = 0;
    std::optional<Mask> current_mask;
    LatentGrid prev_latent;
    std::optional<KVCache> prev_kv;
    std::vector<DiffRecord> diff_history;
};

/// Advances at most one stage: stage s moves to s+1 iff D_t < thresholds[s].
/// Entering a masked stage builds its mask from the latest per-token diff;
/// entering the final stage drops the mask and the large model's cache.
inline StitchState maybe_advance_stage(StitchState state, const DiffResult& diff, const ThresholdSchedule& schedule) {
    if (state.stage >= schedule.final_stage()) return state;
    if (!(diff.d_t < schedule.thresholds()[state.stage])) return state;
    ++state.stage;
    if (schedule.is_masked_stage(state.stage)) {
        state.current_mask = update_mask(diff.per_token, schedule.ratio_for_stage(state.stage));
    } else {
        state.current_mask.reset();
        state.prev_kv.reset();
    }
    return state;
}

enum class Variant { Hybrid, StaticMask, FullLarge, PureLarge, PureSmall, NaiveSwitch };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::Hybrid: return "hybrid";
        case Variant::StaticMask: return "static-mask";
        case Variant::FullLarge: return "full-large";
        case Variant::PureLarge: return "pure-large";
        case Variant::PureSmall: return "pure-small";
        case Variant::NaiveSwitch: return "naive-switch";
    }
    return "unknown";
}

inline Variant parse_variant(const std::string& name) {
    for (Variant v : {Variant::Hybrid, Variant::StaticMask, Variant::FullLarge, Variant::PureLarge,
                      Variant::PureSmall, Variant::NaiveSwitch}) {
        if (to_string(v) == name) return v;
    }
    throw std::invalid_argument("unknown variant '" + name +
                                "' (expected hybrid, static-mask, full-large, pure-large, pure-small, naive-switch)");
}

/// The ladder a variant actually runs. NaiveSwitch keeps only the first
/// threshold and no masked stages; the pure variants have no transitions.
inline ThresholdSchedule effective_schedule(const ThresholdSchedule& schedule, Variant variant) {
    switch (variant) {
        case Variant::NaiveSwitch:
            return ThresholdSchedule({schedule.thresholds().front()}, {}, schedule.sigmas());
        case Variant::PureLarge:
        case Variant::PureSmall:
            return ThresholdSchedule({-std::numeric_limits<double>::infinity()}, {}, schedule.sigmas());
        default:
            return schedule;
    }
}

struct StepTrace {
    std::size_t step = 0;
    std::size_t stage = 0;
    double d_t = 0.0;
    double mask_ratio = 0.0;
    double wall_ms_large = 0.0;
    double wall_ms_small = 0.0;
    std::size_t cache_staleness_max = 0;
};

/// Per-step latencies injected instead of wall-clock measurements.
struct SimulatedLatency {
    double large_s = 0.0;
    double small_s = 0.0;
};

struct GenerationOptions {
    std::optional<SimulatedLatency> simulated;
    // Called after each step with the step index and the latent that step
    // consumed. Runs outside the step's stopwatches.
    std::function<void(std::size_t, const LatentGrid&)> after_step;
};

struct GenerationResult {
    LatentGrid final_latent;
    std::vector<StepTrace> traces;
    /// Ladder actually used by the variant (see effective_schedule).
    std::vector<double> mask_ratios;
    /// Mask used at each step (empty outside masked stages).
    std::vector<std::vector<std::size_t>> mask_history;
    std::size_t degenerate_tokens = 0;
};

inline LatentGrid initial_latent(std::uint64_t noise_seed, std::size_t tokens, std::size_t channels) {
    SeededRng rng(noise_seed);
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
    return LatentGrid(side, gaussian(rng, tokens, channels), 0);
}

namespace detail {

class StopWatch {
public:
    StopWatch() : start_(std::chrono::steady_clock::now()) {}
    double elapsed_ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

inline GenerationResult run_generation(const Denoiser& large, const Denoiser& small,
                                       const ThresholdSchedule& schedule, std::uint64_t noise_seed,
                                       Variant variant, const GenerationOptions& options = {}) {
    const DenoiserConfig& lc = large.config();
    const DenoiserConfig& sc = small.config();
    if (lc.tokens != sc.tokens || lc.channels != sc.channels) {
        throw ShapeError("run_generation: large model latent " + shape_str(lc.tokens, lc.channels) +
                         " differs from small model latent " + shape_str(sc.tokens, sc.channels));
    }
    const ThresholdSchedule plan = effective_schedule(schedule, variant);
    const std::size_t steps = plan.steps();
    const bool advances = variant != Variant::PureLarge && variant != Variant::PureSmall;

    LatentGrid latent = initial_latent(noise_seed, lc.tokens, lc.channels);
    StitchState state;
    state.stage = variant == Variant::PureSmall ? plan.final_stage() : 0;
    state.prev_latent = latent;

    // Steps since each token's K/V row was last produced by the large model.
    std::vector<std::size_t> kv_age(lc.tokens, 0);

    GenerationResult result;
    result.mask_ratios = plan.mask_ratios();
    result.traces.reserve(steps);

    for (std::size_t t = 0; t < steps; ++t) {
        StepTrace trace;
        trace.step = t;
        trace.stage = state.stage;
        trace.mask_ratio = plan.ratio_for_stage(state.stage);

        Grid2D noise;
        double large_ms = 0.0;
        double small_ms = 0.0;
        double sim_large_fraction = 0.0;

        if (state.stage == 0) {
            detail::StopWatch sw;
            ForwardResult full = large.forward_full(latent, t);
            large_ms = sw.elapsed_ms();
            noise = std::move(full.noise);
            state.prev_kv = std::move(full.kv);
            std::fill(kv_age.begin(), kv_age.end(), 0);
            sim_large_fraction = 1.0;
        } else if (plan.is_masked_stage(state.stage)) {
            const Mask& mask = *state.current_mask;
            detail::StopWatch sw_small;
            Grid2D draft = small.forward_full(latent, t).noise;
            small_ms = sw_small.elapsed_ms();

            Grid2D refined;
            detail::StopWatch sw_large;
            if (variant == Variant::FullLarge) {
                ForwardResult full = large.forward_full(latent, t);
                large_ms = sw_large.elapsed_ms();
                refined = gather_rows(full.noise, mask.indices());
                state.prev_kv = std::move(full.kv);
                std::fill(kv_age.begin(), kv_age.end(), 0);
                sim_large_fraction = 1.0;
            } else {
                ForwardResult part =
                    large.forward_masked(gather_rows(latent.data, mask.indices()), mask, *state.prev_kv, t);
                large_ms = sw_large.elapsed_ms();
                refined = std::move(part.noise);
                state.prev_kv = refresh_kv_cache(*state.prev_kv, part.kv, mask);
                for (auto& age : kv_age) ++age;
                for (std::size_t idx : mask.indices()) kv_age[idx] = 0;
                sim_large_fraction = plan.ratio_for_stage(state.stage);
            }
            noise = combine_noise(draft, refined, mask);
        } else {
            detail::StopWatch sw;
            noise = small.forward_full(latent, t).noise;
            small_ms = sw.elapsed_ms();
            std::fill(kv_age.begin(), kv_age.end(), 0);
        }

        if (options.simulated) {
            large_ms = 1e3 * options.simulated->large_s * sim_large_fraction;
            small_ms = state.stage == 0 ? 0.0 : 1e3 * options.simulated->small_s;
        }

        LatentGrid next = update_latent(latent, noise, plan.sigmas()[t]);
        if (!all_finite(next.data)) throw NumericalDivergence(t, "variant " + to_string(variant));

        DiffResult diff = diff_metric(latent, next);
        result.degenerate_tokens += diff.degenerate_tokens;
        state.diff_history.push_back({t, diff.d_t, state.stage});

        trace.d_t = diff.d_t;
        trace.wall_ms_large = large_ms;
        trace.wall_ms_small = small_ms;
        trace.cache_staleness_max = plan.is_masked_stage(state.stage)
                                        ? *std::max_element(kv_age.begin(), kv_age.end())
                                        : 0;
        result.traces.push_back(trace);
        result.mask_history.push_back(plan.is_masked_stage(state.stage) ? state.current_mask->indices()
                                                                        : std::vector<std::size_t>{});

        if (advances) {
            const std::size_t before = state.stage;
            state = maybe_advance_stage(std::move(state), diff, plan);
            const bool refresh_mask = variant == Variant::Hybrid || variant == Variant::FullLarge;
            if (state.stage == before && refresh_mask && plan.is_masked_stage(state.stage)) {
                state.current_mask = update_mask(diff.per_token, plan.ratio_for_stage(state.stage));
            }
        }
        if (options.after_step) options.after_step(t, latent);
        state.prev_latent = next;
        latent = std::move(next);
    }
    result.final_latent = std::move(latent);
    return result;
}

/// 6 significant digits, matching the trace CSV.
inline std::string format_g6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

inline constexpr const char* kTraceCsvHeader =
    "step,stage,d_t,mask_ratio,wall_ms_large,wall_ms_small,cache_staleness_max";

inline void write_trace_csv(std::ostream& os, const std::vector<StepTrace>& traces) {
    os << kTraceCsvHeader << '\n';
    for (const auto& t : traces) {
        os << t.step << ',' << t.stage << ',' << format_g6(t.d_t) << ',' << format_g6(t.mask_ratio) << ','
           << format_g6(t.wall_ms_large) << ',' << format_g6(t.wall_ms_small) << ',' << t.cache_staleness_max
           << '\n';
    }
}

/// First step that ran in stage >= s, for s = 1..count; absent if never reached.
inline std::vector<std::optional<std::size_t>> stage_entry_steps(const std::vector<StepTrace>& traces,
                                                                 std::size_t count) {
    std::vector<std::optional<std::size_t>> out(count);
    for (const auto& t : traces) {
        for (std::size_t s = 1; s <= count && s <= t.stage; ++s) {
            if (!out[s - 1]) out[s - 1] = t.step;
        }
    }
    return out;
}

inline double total_wall_ms(const std::vector<StepTrace>& traces) {
    double total = 0.0;
    for (const auto& t : traces) total += t.wall_ms_large + t.wall_ms_small;
    return total;
}

}  // namespace hybridstitch
