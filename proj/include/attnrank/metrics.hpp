#pragma once

#include <iostream>
#include <map>
#include <set>
#include <vector>

#include "attnrank/common.hpp"

namespace attnrank {

struct RankingMetrics {
    std::map<int, double> recall_at;
    std::map<int, double> avg_at;  // macro-average across datasets
    double mrr = 0;
    int n_queries = 0;
    // recall-ceiling accounting for queries whose gold set missed the shortlist
    int n_no_gold_in_shortlist = 0;
    std::map<int, double> recall_ceiling_at;
};

// Gold-coverage ratio: |gold in top-k| / |gold|.
inline double recall_at_k(const std::vector<int>& ranking,
                          const std::set<int>& gold_indices, int k,
                          bool warn_large_k = true) {
    if (k < 1) throw ArgumentError("recall_at_k: k must be >= 1");
    if (gold_indices.empty()) throw ArgumentError("recall_at_k: empty gold set");
    if (k > static_cast<int>(ranking.size())) {
        if (warn_large_k)
            std::cerr << "warning: recall_at_k with k=" << k << " > "
                      << ranking.size() << " candidates; using full list\n";
        k = static_cast<int>(ranking.size());
    }
    int hits = 0;
    for (int i = 0; i < k; ++i) hits += gold_indices.count(ranking[i]);
    return static_cast<double>(hits) / gold_indices.size();
}

inline std::set<int> gold_from_labels(const std::vector<bool>& labels) {
    std::set<int> gold;
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i]) gold.insert(static_cast<int>(i));
    return gold;
}

inline double recall_at_k(const std::vector<int>& ranking,
                          const std::vector<bool>& labels, int k,
                          bool warn_large_k = true) {
    return recall_at_k(ranking, gold_from_labels(labels), k, warn_large_k);
}

// Any-hit alternative, exposed for comparability with setups that count a
// query as recalled if any gold chunk is in the top-k.
inline double any_hit_at_k(const std::vector<int>& ranking,
                           const std::set<int>& gold_indices, int k) {
    if (k > static_cast<int>(ranking.size())) k = static_cast<int>(ranking.size());
    for (int i = 0; i < k; ++i)
        if (gold_indices.count(ranking[i])) return 1.0;
    return 0.0;
}

inline double reciprocal_rank(const std::vector<int>& ranking,
                              const std::set<int>& gold_indices) {
    for (size_t i = 0; i < ranking.size(); ++i)
        if (gold_indices.count(ranking[i])) return 1.0 / (i + 1);
    return 0.0;
}

// Macro-average per-query metrics over an instance set. `rerank_fn` maps an
// instance to its ranking. Queries without any shortlisted gold count as 0
// and feed the reported recall ceiling.
template <typename Instances, typename RerankFn>
RankingMetrics evaluate(const Instances& instances, RerankFn&& rerank_fn,
                        const std::vector<int>& ks = {1, 3, 5, 10},
                        bool any_hit = false) {
    if (instances.empty()) throw ArgumentError("evaluate: empty instance set");
    RankingMetrics m;
    for (int k : ks) {
        m.recall_at[k] = 0;
        m.recall_ceiling_at[k] = 0;
    }
    for (const auto& inst : instances) {
        ++m.n_queries;
        if (!inst.gold_in_shortlist()) {
            ++m.n_no_gold_in_shortlist;
            continue;  // counts as 0 everywhere
        }
        std::set<int> gold = gold_from_labels(inst.labels);
        std::vector<int> ranking = rerank_fn(inst);
        for (int k : ks) {
            m.recall_at[k] += any_hit ? any_hit_at_k(ranking, gold, k)
                                      : recall_at_k(ranking, gold, k, false);
            m.recall_ceiling_at[k] += 1.0;
        }
        m.mrr += reciprocal_rank(ranking, gold);
    }
    for (int k : ks) {
        m.recall_at[k] /= m.n_queries;
        m.recall_ceiling_at[k] /= m.n_queries;
    }
    m.mrr /= m.n_queries;
    m.avg_at = m.recall_at;  // single-dataset view
    return m;
}

// avg@k over several datasets' metrics.
inline RankingMetrics macro_average(const std::vector<RankingMetrics>& per_dataset) {
    if (per_dataset.empty()) throw ArgumentError("macro_average: empty input");
    RankingMetrics out;
    for (const auto& m : per_dataset) {
        out.n_queries += m.n_queries;
        out.mrr += m.mrr;
        for (const auto& [k, v] : m.recall_at) out.avg_at[k] += v;
    }
    for (auto& [k, v] : out.avg_at) v /= per_dataset.size();
    out.mrr /= per_dataset.size();
    return out;
}

}  // namespace attnrank
