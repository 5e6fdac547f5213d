#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "attnrank/model.hpp"
#include "attnrank/prompt.hpp"
#include "attnrank/types.hpp"

namespace attnrank {

enum class Aggregation { Sum, Max };

inline const char* to_string(Aggregation a) {
    return a == Aggregation::Sum ? "sum" : "max";
}

struct ScoreProvenance {
    std::string head_set_id = "default";
    bool calibrated = false;
    bool normalized = false;
    Aggregation aggregation = Aggregation::Sum;
};

struct ScoreVector {
    std::vector<double> scores;
    std::vector<int> ranking;  // candidate indices, descending score
    ScoreProvenance provenance;
};

// Descending scores, ties broken by original shortlist position.
inline std::vector<int> ranking_of(const std::vector<double>& scores) {
    std::vector<int> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });
    return idx;
}

// Per-head retrieval score of one candidate: mean over query tokens of the
// attention mass on that chunk's content tokens.
template <typename Scalar>
double head_chunk_score(const AttentionCapture<Scalar>& capture,
                        const PromptLayout& layout, int chunk_index, HeadId head) {
    if (chunk_index < 0 || chunk_index >= static_cast<int>(layout.chunk_spans.size()))
        throw ArgumentError("head_chunk_score: chunk index out of range");
    const auto& rows = capture.rows_for(head);
    const Span q = layout.query_span;
    const Span c = layout.chunk_spans[chunk_index];
    double total = 0;
    for (int t = q.begin; t < q.end; ++t) {
        int qi = capture.row_index(t);
        total += rows.row(qi).segment(c.begin, c.size()).template cast<double>().sum();
    }
    return total / q.size();
}

// Max variant: the single largest attention entry over (query token, chunk
// token) pairs.
template <typename Scalar>
double head_chunk_score_max(const AttentionCapture<Scalar>& capture,
                            const PromptLayout& layout, int chunk_index, HeadId head) {
    if (chunk_index < 0 || chunk_index >= static_cast<int>(layout.chunk_spans.size()))
        throw ArgumentError("head_chunk_score: chunk index out of range");
    const auto& rows = capture.rows_for(head);
    const Span q = layout.query_span;
    const Span c = layout.chunk_spans[chunk_index];
    double best = 0;
    for (int t = q.begin; t < q.end; ++t) {
        int qi = capture.row_index(t);
        best = std::max(best, static_cast<double>(
                                  rows.row(qi).segment(c.begin, c.size()).maxCoeff()));
    }
    return best;
}

// per_head_scores: head -> one score per candidate.
inline std::vector<double> aggregate_heads(
    const std::map<HeadId, std::vector<double>>& per_head_scores,
    const HeadSet& head_set) {
    if (head_set.heads.empty()) throw ArgumentError("aggregate_heads: empty head set");
    size_t n = 0;
    std::vector<double> out;
    for (size_t i = 0; i < head_set.heads.size(); ++i) {
        auto it = per_head_scores.find(head_set.heads[i]);
        if (it == per_head_scores.end())
            throw ArgumentError("aggregate_heads: missing scores for head " +
                                head_set.heads[i].str());
        if (i == 0) {
            n = it->second.size();
            out.assign(n, 0.0);
        } else if (it->second.size() != n) {
            throw ArgumentError("aggregate_heads: candidate count mismatch");
        }
        double w = head_set.weight(i);
        for (size_t c = 0; c < n; ++c) out[c] += w * it->second[c];
    }
    return out;
}

// Null-query calibration: elementwise subtraction; results may be negative.
inline std::vector<double> calibrate(const std::vector<double>& scores,
                                     const std::vector<double>& null_scores) {
    if (scores.size() != null_scores.size())
        throw ArgumentError("calibrate: length mismatch");
    std::vector<double> out(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] - null_scores[i];
    return out;
}

// Max-min normalization onto [0, scale]. All-equal input maps to all zeros
// so untrained models emitting near-constant scores stay usable downstream.
inline std::vector<double> max_min_norm(const std::vector<double>& scores,
                                        double scale) {
    if (scores.size() < 2) throw ArgumentError("max_min_norm: need >= 2 scores");
    double lo = *std::min_element(scores.begin(), scores.end());
    double hi = *std::max_element(scores.begin(), scores.end());
    std::vector<double> out(scores.size(), 0.0);
    if (hi == lo) return out;
    for (size_t i = 0; i < scores.size(); ++i)
        out[i] = scale * (scores[i] - lo) / (hi - lo);
    return out;
}

struct RerankOptions {
    bool calibrate = false;
    bool normalize = true;
    double scale = 8.0;
    Aggregation aggregation = Aggregation::Sum;
};

template <typename Scalar>
std::vector<double> chunk_scores_from_capture(const AttentionCapture<Scalar>& capture,
                                              const PromptLayout& layout,
                                              const HeadSet& head_set,
                                              Aggregation aggregation) {
    std::map<HeadId, std::vector<double>> per_head;
    const int n = static_cast<int>(layout.chunk_spans.size());
    for (const auto& head : head_set.heads) {
        std::vector<double> s(n);
        for (int c = 0; c < n; ++c)
            s[c] = aggregation == Aggregation::Sum
                       ? head_chunk_score(capture, layout, c, head)
                       : head_chunk_score_max(capture, layout, c, head);
        per_head[head] = std::move(s);
    }
    return aggregate_heads(per_head, head_set);
}

// Listwise reranker: one prefill for the scored pass, optionally a second
// prefill with the null query for calibration, no generation anywhere.
template <typename Scalar>
class Reranker {
  public:
    Reranker(Model<Scalar> model, PromptAssembler assembler, HeadSet head_set,
             std::string head_set_id = "default")
        : model_(std::move(model)),
          assembler_(std::move(assembler)),
          head_set_(std::move(head_set)),
          head_set_id_(std::move(head_set_id)) {
        head_set_.validate();
        if (head_set_.max_layer() >= model_.active_layers())
            throw ArgumentError("head set references layer " +
                                std::to_string(head_set_.max_layer()) +
                                " beyond active layers");
    }

    const Model<Scalar>& model() const { return model_; }
    const PromptAssembler& assembler() const { return assembler_; }
    const HeadSet& head_set() const { return head_set_; }

    ScoreVector rerank(const ListwiseInstance& inst,
                       const RerankOptions& opts = {}) const {
        PromptLayout layout = assembler_.assemble(inst);
        {
            auto capture = model_.forward_with_attention(layout.tokens,
                                                         layout.query_rows(),
                                                         &head_set_);
            std::vector<double> scores =
                chunk_scores_from_capture(capture, layout, head_set_, opts.aggregation);

            if (opts.calibrate) {
                AssembleOptions null_opts;
                null_opts.substitute_null_query = true;
                PromptLayout null_layout = assembler_.assemble(inst, null_opts);
                auto null_cap = model_.forward_with_attention(
                    null_layout.tokens, null_layout.query_rows(), &head_set_);
                scores = attnrank::calibrate(
                    scores, chunk_scores_from_capture(null_cap, null_layout, head_set_,
                                                      opts.aggregation));
            }
            if (opts.normalize) scores = max_min_norm(scores, opts.scale);

            ScoreVector sv;
            sv.scores = std::move(scores);
            sv.ranking = ranking_of(sv.scores);
            sv.provenance = {head_set_id_, opts.calibrate, opts.normalize,
                             opts.aggregation};
            return sv;
        }
    }

  private:
    Model<Scalar> model_;
    PromptAssembler assembler_;
    HeadSet head_set_;
    std::string head_set_id_;
};

}  // namespace attnrank
