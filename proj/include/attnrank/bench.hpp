#pragma once

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <vector>

#include "attnrank/score.hpp"
#include "attnrank/types.hpp"

namespace attnrank {

struct EfficiencyReport {
    double latency_p50_ms = 0;
    double latency_p95_ms = 0;
    double flops_per_query = 0;
    long peak_memory_bytes = 0;
    int n_queries = 0;
};

struct FlopsBreakdown {
    double matmul = 0;     // linear in prompt length
    double attention = 0;  // quadratic in prompt length

    double total() const { return matmul + attention; }
};

// Analytic per-query FLOP count from config and prompt length, using the
// 2 * params * tokens matmul approximation plus the explicit attention term.
// Embedding lookup and softmax overhead excluded.
inline FlopsBreakdown flops_per_query(const ModelConfig& c, int prompt_len,
                                      int n_layers_active) {
    const double T = prompt_len;
    const double d = c.d_model;
    FlopsBreakdown f;
    double layer_params = 4.0 * d * d + 2.0 * d * c.d_ffn;
    f.matmul = 2.0 * layer_params * T * n_layers_active;
    // QK^T and PV: each 2 * T^2 * d per layer
    f.attention = 2.0 * 2.0 * T * T * d * n_layers_active;
    return f;
}

inline long peak_memory_bytes() {
    struct rusage ru;
    getrusage(RUSAGE_SELF, &ru);
    return ru.ru_maxrss * 1024L;  // ru_maxrss is KiB on Linux
}

inline double percentile(std::vector<double> samples, double p) {
    std::sort(samples.begin(), samples.end());
    size_t rank = static_cast<size_t>(std::ceil(p * samples.size()));
    if (rank == 0) rank = 1;
    return samples[rank - 1];
}

// Wall-clock rerank latency percentiles over `repetitions` timed calls
// (cycling through the instance set), after discarding warmup runs.
// Sequential single-query execution keeps the percentiles meaningful.
template <typename Scalar>
EfficiencyReport bench(const Reranker<Scalar>& reranker,
                       const std::vector<ListwiseInstance>& instances,
                       int repetitions, const RerankOptions& opts = {},
                       int warmup = 3) {
    if (repetitions < 20)
        throw ArgumentError("bench: need repetitions >= 20");
    if (instances.empty()) throw ArgumentError("bench: empty instance set");

    for (int w = 0; w < warmup; ++w)
        reranker.rerank(instances[w % instances.size()], opts);

    std::vector<double> latencies_ms;
    double prompt_len_sum = 0;
    for (int r = 0; r < repetitions; ++r) {
        const auto& inst = instances[r % instances.size()];
        auto t0 = std::chrono::steady_clock::now();
        reranker.rerank(inst, opts);
        auto t1 = std::chrono::steady_clock::now();
        latencies_ms.push_back(
            std::chrono::duration<double, std::milli>(t1 - t0).count());
        prompt_len_sum += static_cast<double>(
            reranker.assembler().assemble(inst).tokens.size());
    }
    double median = percentile(latencies_ms, 0.5);
    if (median < 1e-3)  // below ~1us the steady clock cannot resolve reliably
        throw Error("bench: timer resolution insufficient for measured durations");

    EfficiencyReport rep;
    rep.latency_p50_ms = median;
    rep.latency_p95_ms = percentile(latencies_ms, 0.95);
    int avg_len = static_cast<int>(prompt_len_sum / repetitions);
    auto fl = flops_per_query(reranker.model().config(), avg_len,
                              reranker.model().active_layers());
    rep.flops_per_query = opts.calibrate ? 2 * fl.total() : fl.total();
    rep.peak_memory_bytes = peak_memory_bytes();
    rep.n_queries = repetitions;
    return rep;
}

}  // namespace attnrank
