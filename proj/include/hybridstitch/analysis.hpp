// Toy-scale studies: large/small prediction divergence, switch-step
// distributions, masked-forward latency versus mask size, and a quality proxy.
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "hybridstitch/denoiser.hpp"
#include "hybridstitch/stitcher.hpp"

namespace hybridstitch {

/// Runs fn(i) for i in [0, count) on up to `workers` threads. Each index is
/// handled exactly once; the first exception is rethrown after all workers join.
inline void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(count, 1));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        if (!failed.exchange(true)) error = std::current_exception();
                    }
                }
            });
        }
    }
    if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Divergence between large and small predictions

struct DiffHistogram {
    std::size_t step = 0;
    std::vector<double> bin_edges;  // bins + 1 edges over [0, max]
    std::vector<std::size_t> counts;
    double fraction_near_zero = 0.0;
    double near_zero_cutoff = 0.0;
    double max_diff = 0.0;

    std::size_t total() const {
        std::size_t n = 0;
        for (auto c : counts) n += c;
        return n;
    }
};

struct DivergenceOptions {
    std::size_t bins = 20;
    double near_zero_cutoff = 1e-3;
    std::size_t workers = 1;
};

/// Per-token divergence of two predictions: mean |large - small| over the
/// token's channels, relative to the mean |large| over the whole grid.
inline std::vector<double> prediction_divergence(const Grid2D& large, const Grid2D& small) {
    require_same_shape(large, small, "prediction_divergence");
    double scale = 0.0;
    for (float v : large.values()) scale += std::fabs(static_cast<double>(v));
    scale = std::max(scale / static_cast<double>(large.size()), kDiffEpsilon);
    std::vector<double> out(large.rows());
    for (std::size_t i = 0; i < large.rows(); ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < large.cols(); ++c) {
            s += std::fabs(static_cast<double>(large(i, c)) - static_cast<double>(small(i, c)));
        }
        out[i] = s / static_cast<double>(large.cols()) / scale;
    }
    return out;
}

inline DiffHistogram make_histogram(std::size_t step, const std::vector<double>& values, std::size_t bins,
                                    double near_zero_cutoff) {
    DiffHistogram h;
    h.step = step;
    h.near_zero_cutoff = near_zero_cutoff;
    bins = std::max<std::size_t>(bins, 1);
    for (double v : values) h.max_diff = std::max(h.max_diff, v);
    const double top = h.max_diff > 0.0 ? h.max_diff : near_zero_cutoff;
    h.bin_edges.resize(bins + 1);
    for (std::size_t b = 0; b <= bins; ++b) h.bin_edges[b] = top * static_cast<double>(b) / static_cast<double>(bins);
    h.counts.assign(bins, 0);
    std::size_t near_zero = 0;
    for (double v : values) {
        auto b = static_cast<std::size_t>(v / top * static_cast<double>(bins));
        h.counts[std::min(b, bins - 1)]++;
        if (v < near_zero_cutoff) ++near_zero;
    }
    h.fraction_near_zero = values.empty() ? 0.0 : static_cast<double>(near_zero) / static_cast<double>(values.size());
    return h;
}

/// Both models predict from the same latent at every step; the large model's
/// prediction drives the next latent. Histograms at each probe step pool the
/// per-token divergence of every seed (counts sum to tokens * seeds).
inline std::vector<DiffHistogram> model_divergence_study(const Denoiser& large, const Denoiser& small,
                                                         const std::vector<std::uint64_t>& seeds,
                                                         const std::vector<std::size_t>& probe_steps,
                                                         const std::vector<double>& sigmas,
                                                         const DivergenceOptions& options = {}) {
    const auto& lc = large.config();
    const auto& sc = small.config();
    if (lc.tokens != sc.tokens || lc.channels != sc.channels) {
        throw ShapeError("model_divergence_study: models disagree on latent shape");
    }
    for (auto p : probe_steps) {
        if (p >= sigmas.size()) {
            throw std::invalid_argument("model_divergence_study: probe step " + std::to_string(p) + " >= T=" +
                                        std::to_string(sigmas.size()));
        }
    }
    // per_seed[s][k] = divergence at probe_steps[k]
    std::vector<std::vector<std::vector<double>>> per_seed(seeds.size());
    parallel_for(seeds.size(), options.workers, [&](std::size_t s) {
        LatentGrid latent = initial_latent(seeds[s], lc.tokens, lc.channels);
        per_seed[s].resize(probe_steps.size());
        for (std::size_t t = 0; t < sigmas.size(); ++t) {
            Grid2D nl = large.forward_full(latent, t).noise;
            const auto probe = std::find(probe_steps.begin(), probe_steps.end(), t);
            if (probe != probe_steps.end()) {
                Grid2D ns = small.forward_full(latent, t).noise;
                per_seed[s][static_cast<std::size_t>(probe - probe_steps.begin())] = prediction_divergence(nl, ns);
            }
            latent = update_latent(latent, nl, sigmas[t]);
        }
    });
    std::vector<DiffHistogram> out;
    for (std::size_t k = 0; k < probe_steps.size(); ++k) {
        std::vector<double> pooled;
        for (const auto& s : per_seed) pooled.insert(pooled.end(), s[k].begin(), s[k].end());
        out.push_back(make_histogram(probe_steps[k], pooled, options.bins, options.near_zero_cutoff));
    }
    return out;
}

inline void write_divergence_csv(std::ostream& os, const std::vector<DiffHistogram>& hists) {
    os << "step,bin_lo,bin_hi,count,fraction_near_zero,near_zero_cutoff\n";
    for (const auto& h : hists) {
        for (std::size_t b = 0; b < h.counts.size(); ++b) {
            os << h.step << ',' << format_g6(h.bin_edges[b]) << ',' << format_g6(h.bin_edges[b + 1]) << ','
               << h.counts[b] << ',' << format_g6(h.fraction_near_zero) << ',' << format_g6(h.near_zero_cutoff)
               << '\n';
        }
    }
}

/// gnuplot-friendly blocks, one per probe step: "bin_center count".
inline void write_divergence_dat(std::ostream& os, const std::vector<DiffHistogram>& hists) {
    for (const auto& h : hists) {
        os << "# step " << h.step << " fraction_near_zero " << format_g6(h.fraction_near_zero) << '\n';
        for (std::size_t b = 0; b < h.counts.size(); ++b) {
            os << format_g6(0.5 * (h.bin_edges[b] + h.bin_edges[b + 1])) << ' ' << h.counts[b] << '\n';
        }
        os << "\n\n";
    }
}

// ---------------------------------------------------------------------------
// Switch steps

struct SwitchStepRecord {
    Variant variant = Variant::Hybrid;
    std::uint64_t seed = 0;
    std::optional<std::size_t> first_switch;
    std::optional<std::size_t> second_switch;
    std::string error;
};

/// One run_generation per (variant, seed); failures are recorded, not thrown.
/// Records are ordered by variant, then seed.
inline std::vector<SwitchStepRecord> switch_step_study(const Denoiser& large, const Denoiser& small,
                                                       const ThresholdSchedule& schedule,
                                                       const std::vector<Variant>& variants,
                                                       const std::vector<std::uint64_t>& seeds,
                                                       std::size_t workers = 1) {
    std::vector<SwitchStepRecord> out(variants.size() * seeds.size());
    parallel_for(out.size(), workers, [&](std::size_t i) {
        SwitchStepRecord& rec = out[i];
        rec.variant = variants[i / seeds.size()];
        rec.seed = seeds[i % seeds.size()];
        try {
            const auto result = run_generation(large, small, schedule, rec.seed, rec.variant);
            const auto entries = stage_entry_steps(result.traces, 2);
            rec.first_switch = entries[0];
            rec.second_switch = entries[1];
        } catch (const std::exception& e) {
            rec.error = e.what();
        }
    });
    return out;
}

inline void write_switch_csv(std::ostream& os, const std::vector<SwitchStepRecord>& records) {
    os << "variant,seed,first_switch,second_switch,error\n";
    for (const auto& r : records) {
        os << to_string(r.variant) << ',' << r.seed << ',';
        if (r.first_switch) os << *r.first_switch;
        os << ',';
        if (r.second_switch) os << *r.second_switch;
        os << ',' << r.error << '\n';
    }
}

// ---------------------------------------------------------------------------
// Masked-forward latency

struct LatencyPoint {
    double mask_ratio = 0.0;
    std::size_t mask_tokens = 0;
    double mean_ms = 0.0;
    double median_ms = 0.0;
    std::size_t runs = 0;
};

struct MaskLatencyResult {
    std::vector<LatencyPoint> points;
    LatencyPoint full;  // forward_full on the same latent
};

struct LatencyOptions {
    std::size_t runs = 50;
    std::size_t warmup = 5;
    std::uint64_t seed = 0;
};

namespace detail {

inline LatencyPoint summarize(double ratio, std::size_t tokens, std::vector<double> samples) {
    LatencyPoint p;
    p.mask_ratio = ratio;
    p.mask_tokens = tokens;
    p.runs = samples.size();
    if (samples.empty()) return p;
    double sum = 0.0;
    for (double s : samples) sum += s;
    p.mean_ms = sum / static_cast<double>(samples.size());
    std::sort(samples.begin(), samples.end());
    const std::size_t n = samples.size();
    p.median_ms = n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
    return p;
}

}  // namespace detail

/// Times forward_masked for each ratio (and forward_full once as reference).
/// Each measurement is preceded by `warmup` untimed calls. The mask for a
/// ratio is the top-k of a seeded random score per token.
inline MaskLatencyResult mask_latency_study(const Denoiser& large, const std::vector<double>& ratios,
                                            const LatencyOptions& options = {}) {
    const auto& cfg = large.config();
    const LatentGrid latent = initial_latent(options.seed, cfg.tokens, cfg.channels);
    const ForwardResult reference = large.forward_full(latent, 0);

    SeededRng rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<double> scores(cfg.tokens);
    for (double& s : scores) s = rng.uniform();

    auto time_it = [&](const std::function<void()>& fn) {
        for (std::size_t i = 0; i < options.warmup; ++i) fn();
        std::vector<double> samples;
        samples.reserve(options.runs);
        for (std::size_t i = 0; i < options.runs; ++i) {
            detail::StopWatch sw;
            fn();
            samples.push_back(sw.elapsed_ms());
        }
        return samples;
    };

    MaskLatencyResult result;
    for (double ratio : ratios) {
        if (!(ratio > 0.0 && ratio <= 1.0)) {
            throw std::invalid_argument("mask_latency_study: ratio " + std::to_string(ratio) + " outside (0, 1]");
        }
        const Mask mask = update_mask(scores, ratio);
        const Grid2D rows = gather_rows(latent.data, mask.indices());
        auto samples = time_it([&] { (void)large.forward_masked(rows, mask, reference.kv, 1); });
        result.points.push_back(detail::summarize(ratio, mask.size(), std::move(samples)));
    }
    auto samples = time_it([&] { (void)large.forward_full(latent, 1); });
    result.full = detail::summarize(1.0, cfg.tokens, std::move(samples));
    return result;
}

inline void write_latency_csv(std::ostream& os, const MaskLatencyResult& r) {
    os << "mask_ratio,mask_tokens,mean_ms,median_ms,runs\n";
    for (const auto& p : r.points) {
        os << format_g6(p.mask_ratio) << ',' << p.mask_tokens << ',' << format_g6(p.mean_ms) << ','
           << format_g6(p.median_ms) << ',' << p.runs << '\n';
    }
    os << "full," << r.full.mask_tokens << ',' << format_g6(r.full.mean_ms) << ',' << format_g6(r.full.median_ms)
       << ',' << r.full.runs << '\n';
}

// ---------------------------------------------------------------------------
// Quality proxy

struct QualityProxy {
    double rel_l1_vs_large = 0.0;
    double max_abs_dev = 0.0;
};

/// Mean per-token relative L1 of the hybrid result against the pure-large
/// result (the switch metric, with pure-large as reference), plus max |dev|.
inline QualityProxy quality_proxy(const LatentGrid& hybrid, const LatentGrid& pure_large) {
    require_same_shape(hybrid.data, pure_large.data, "quality_proxy");
    QualityProxy q;
    q.rel_l1_vs_large = diff_metric(pure_large.data, hybrid.data).d_t;
    auto a = hybrid.data.values();
    auto b = pure_large.data.values();
    for (std::size_t i = 0; i < a.size(); ++i) {
        q.max_abs_dev = std::max(q.max_abs_dev, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    return q;
}

}  // namespace hybridstitch
