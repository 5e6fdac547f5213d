#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>

#include "attnrank/bench.hpp"
#include "attnrank/data.hpp"
#include "attnrank/loss.hpp"
#include "attnrank/metrics.hpp"
#include "attnrank/model.hpp"
#include "attnrank/probe.hpp"
#include "attnrank/prompt.hpp"
#include "attnrank/score.hpp"
#include "attnrank/tokenizer.hpp"
#include "attnrank/train.hpp"

namespace testhelp {

using namespace attnrank;

inline ModelConfig tiny_config(int n_layers = 2, int n_heads = 2, int d_head = 8,
                               int vocab = 256, int max_seq_len = 256) {
    ModelConfig c;
    c.n_layers = n_layers;
    c.n_heads = n_heads;
    c.d_head = d_head;
    c.d_model = n_heads * d_head;
    c.d_ffn = 2 * c.d_model;
    c.vocab_size = vocab;
    c.max_seq_len = max_seq_len;
    return c;
}

inline PromptAssembler make_assembler(int vocab = 256, int max_seq_len = 256) {
    InstructionTemplate tmpl;
    return PromptAssembler(Tokenizer::build(vocab, default_reserved_words(tmpl)),
                           tmpl, max_seq_len);
}

// A small corpus/instance pipeline usable with the tiny tokenizer: symbols
// stay below w128 (60 keys + 60 values + 8 fillers).
inline std::vector<ListwiseInstance> tiny_instances(int n, int K = 6,
                                                    uint64_t seed = 5) {
    CorpusSpec cs;
    cs.n_chunks = 60;
    cs.chunk_len = 4;
    cs.n_fillers = 8;
    cs.block_size = 20;
    cs.seed = seed;
    Corpus corpus = generate_corpus(cs);
    auto queries = generate_queries(corpus, cs, n, seed + 1);
    return build_instances(corpus, queries, K);
}

// Loss of one non-gated training sample as a pure function of the model,
// plus its analytic parameter gradients; mirrors the trainer's per-instance
// path so finite differences can check the full chain.
template <typename Scalar>
inline double instance_loss(const Model<Scalar>& model, const PromptAssembler& asmb,
                            const HeadSet& hs, const ListwiseInstance& inst,
                            double scale) {
    PromptLayout layout = asmb.assemble(inst);
    ForwardTrace<Scalar> trace = model.forward_trace(layout.tokens);
    const Span q = layout.query_span;
    const int n_cand = static_cast<int>(layout.chunk_spans.size());
    std::map<HeadId, std::vector<double>> per_head;
    for (const auto& head : hs.heads) {
        const Matrix<Scalar>& P = trace.layers[head.layer].probs[head.head];
        std::vector<double> s(n_cand);
        for (int c = 0; c < n_cand; ++c) {
            const Span cs = layout.chunk_spans[c];
            double total = 0;
            for (int t = q.begin; t < q.end; ++t)
                total += static_cast<double>(
                    P.row(t).segment(cs.begin, cs.size()).template cast<double>().sum());
            s[c] = total / q.size();
        }
        per_head[head] = std::move(s);
    }
    std::vector<double> raw = aggregate_heads(per_head, hs);
    std::vector<double> normed = max_min_norm(raw, scale);
    return group_contrastive_loss(normed, inst.labels).loss;
}

template <typename Scalar>
inline std::pair<double, Grads<Scalar>> instance_loss_grads(
    const Model<Scalar>& model, const PromptAssembler& asmb, const HeadSet& hs,
    const ListwiseInstance& inst, double scale) {
    PromptLayout layout = asmb.assemble(inst);
    ForwardTrace<Scalar> trace = model.forward_trace(layout.tokens);
    const int T = static_cast<int>(layout.tokens.size());
    const Span q = layout.query_span;
    const int n_cand = static_cast<int>(layout.chunk_spans.size());
    std::map<HeadId, std::vector<double>> per_head;
    for (const auto& head : hs.heads) {
        const Matrix<Scalar>& P = trace.layers[head.layer].probs[head.head];
        std::vector<double> s(n_cand);
        for (int c = 0; c < n_cand; ++c) {
            const Span cs = layout.chunk_spans[c];
            double total = 0;
            for (int t = q.begin; t < q.end; ++t)
                total += static_cast<double>(
                    P.row(t).segment(cs.begin, cs.size()).template cast<double>().sum());
            s[c] = total / q.size();
        }
        per_head[head] = std::move(s);
    }
    std::vector<double> raw = aggregate_heads(per_head, hs);
    std::vector<double> normed = max_min_norm(raw, scale);
    LossResult lr = group_contrastive_loss(normed, inst.labels);
    std::vector<double> draw = max_min_norm_backward(raw, lr.grad, scale);

    BackwardInputs<Scalar> inputs;
    for (size_t hi = 0; hi < hs.heads.size(); ++hi) {
        const HeadId head = hs.heads[hi];
        Matrix<Scalar>& dP =
            inputs.d_probs.try_emplace(head, Matrix<Scalar>::Zero(T, T)).first->second;
        for (int c = 0; c < n_cand; ++c) {
            const Span cs = layout.chunk_spans[c];
            Scalar v = Scalar(draw[c] * hs.weight(hi) / q.size());
            dP.block(q.begin, cs.begin, q.size(), cs.size()).array() += v;
        }
    }
    return {lr.loss, model.backward(trace, inputs)};
}

struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               (tag + "-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }

  private:
    static int& counter() {
        static int c = 0;
        return c;
    }
};

}  // namespace testhelp
