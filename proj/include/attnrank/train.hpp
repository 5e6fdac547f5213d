#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "attnrank/loss.hpp"
#include "attnrank/metrics.hpp"
#include "attnrank/model.hpp"
#include "attnrank/probe.hpp"
#include "attnrank/score.hpp"
#include "json.hpp"

namespace attnrank {

enum class TrainableScope { All, SelectedHeadQK };

struct GateConfig {
    bool enabled = false;
    int l_start = 0;
    int l_end = 0;  // half-open
    int n_per_layer = 0;
};

struct TrainConfig {
    double learning_rate = 1e-5;
    int grad_accum_steps = 4;
    int batch_size = 1;
    double scale = 8.0;
    int epochs = 2;
    TrainableScope trainable_scope = TrainableScope::All;
    uint64_t seed = 0;
    double weight_decay = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int recall_k = 1;
    int checkpoint_every = 0;  // optimizer steps; 0 = final only
    GateConfig gate;

    void validate() const {
        if (learning_rate < 0 || grad_accum_steps <= 0 || batch_size <= 0 ||
            scale <= 0 || epochs <= 0 || recall_k <= 0)
            throw ArgumentError("TrainConfig: all values must be positive");
        if (gate.enabled) {
            if (gate.l_start < 0 || gate.l_end <= gate.l_start || gate.n_per_layer < 1)
                throw ArgumentError("TrainConfig: invalid gate layer range");
        }
    }
};

// Per-layer gate of the semi-automatic head-selection variant: a linear map
// from the residual stream to per-head logits.
template <typename Scalar>
struct GateParams {
    std::vector<Matrix<Scalar>> w;  // one (d_model x n_heads) per gated layer
    int l_start = 0;
    int n_per_layer = 1;

    static GateParams zeros(const ModelConfig& c, const GateConfig& g) {
        GateParams p;
        p.l_start = g.l_start;
        p.n_per_layer = g.n_per_layer;
        for (int l = g.l_start; l < g.l_end; ++l)
            p.w.push_back(Matrix<Scalar>::Zero(c.d_model, c.n_heads));
        return p;
    }

    int l_end() const { return l_start + static_cast<int>(w.size()); }
};

// Per-token softmax over heads, averaged over the bracketed-query tokens;
// the result is a probability distribution over the layer's heads.
template <typename Scalar>
Vector<Scalar> gate_head_scores(const Matrix<Scalar>& hidden_q, const Matrix<Scalar>& w) {
    if (hidden_q.cols() != w.rows())
        throw ArgumentError("gate_head_scores: dimension mismatch");
    if (hidden_q.rows() == 0) throw ArgumentError("gate_head_scores: empty span");
    Matrix<Scalar> z = hidden_q * w;
    Vector<Scalar> mean = Vector<Scalar>::Zero(w.cols());
    for (int t = 0; t < z.rows(); ++t) {
        auto row = z.row(t);
        Scalar mx = row.maxCoeff();
        auto e = (row.array() - mx).exp().eval();
        mean += (e / e.sum()).matrix().transpose();
    }
    return mean / Scalar(z.rows());
}

// Top-n heads by gate score (ties to the lower head index), selected weights
// renormalized to sum 1. The weights later multiply head retrieval scores so
// gradients reach the gate.
template <typename Scalar>
std::pair<std::vector<int>, std::vector<double>> gate_select(
    const Vector<Scalar>& head_scores, int n) {
    const int n_heads = static_cast<int>(head_scores.size());
    if (n < 1 || n > n_heads) throw ArgumentError("gate_select: invalid n");
    std::vector<int> idx(n_heads);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return head_scores(a) > head_scores(b);
    });
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    double total = 0;
    for (int h : idx) total += static_cast<double>(head_scores(h));
    std::vector<double> weights(n);
    for (int i = 0; i < n; ++i)
        weights[i] = total > 0 ? static_cast<double>(head_scores(idx[i])) / total
                               : 1.0 / n;
    return {idx, weights};
}

// --- optimizer ----------------------------------------------------------

template <typename Scalar>
struct TensorRef {
    Scalar* data;
    long size;
};

// Adam with decoupled weight decay over flat tensor views.
template <typename Scalar>
class AdamW {
  public:
    AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

    // `masks` (0/1 per coordinate) freezes coordinates entirely, including
    // the decoupled weight decay.
    void step(const std::vector<TensorRef<Scalar>>& params,
              const std::vector<TensorRef<Scalar>>& grads,
              const std::vector<TensorRef<Scalar>>* masks = nullptr) {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.push_back(Vector<Scalar>::Zero(p.size));
                v_.push_back(Vector<Scalar>::Zero(p.size));
            }
        }
        ++t_;
        const Scalar b1 = Scalar(cfg_.adam_beta1), b2 = Scalar(cfg_.adam_beta2);
        const Scalar corr1 = Scalar(1) - Scalar(std::pow(cfg_.adam_beta1, double(t_)));
        const Scalar corr2 = Scalar(1) - Scalar(std::pow(cfg_.adam_beta2, double(t_)));
        const Scalar lr = Scalar(cfg_.learning_rate);
        for (size_t i = 0; i < params.size(); ++i) {
            Eigen::Map<Vector<Scalar>> p(params[i].data, params[i].size);
            Eigen::Map<const Vector<Scalar>> g(grads[i].data, grads[i].size);
            auto& m = m_[i];
            auto& v = v_[i];
            m = b1 * m + (Scalar(1) - b1) * g;
            v = (b2 * v.array() + (Scalar(1) - b2) * g.array().square()).matrix();
            auto mhat = (m / corr1).array();
            auto vhat = (v / corr2).array();
            Vector<Scalar> update =
                (lr * (mhat / (vhat.sqrt() + Scalar(cfg_.adam_eps)) +
                       Scalar(cfg_.weight_decay) * p.array()))
                    .matrix();
            if (masks) {
                Eigen::Map<const Vector<Scalar>> mask((*masks)[i].data,
                                                      (*masks)[i].size);
                update.array() *= mask.array();
            }
            p -= update;
        }
    }

  private:
    TrainConfig cfg_;
    std::vector<Vector<Scalar>> m_, v_;
    long t_ = 0;
};

// --- trainer ------------------------------------------------------------

struct StepMetrics {
    long step = 0;
    double loss = 0;
    double grad_norm = 0;
    double recall_at_k = 0;
};

template <typename Scalar>
class Trainer {
  public:
    Trainer(Model<Scalar> model, PromptAssembler assembler, HeadSet head_set,
            TrainConfig config)
        : model_(std::move(model)),
          assembler_(std::move(assembler)),
          head_set_(std::move(head_set)),
          config_(config),
          grads_(model_.config()),
          opt_(config) {
        config_.validate();
        head_set_.validate();
        if (config_.gate.enabled) {
            if (config_.gate.l_end > model_.config().n_layers ||
                config_.gate.n_per_layer > model_.config().n_heads)
                throw ArgumentError("gate range outside model");
            gate_ = GateParams<Scalar>::zeros(model_.config(), config_.gate);
            gate_grads_ = GateParams<Scalar>::zeros(model_.config(), config_.gate);
            gate_opt_.emplace(config_);
        }
    }

    Model<Scalar>& model() { return model_; }
    const GateParams<Scalar>& gate() const { return *gate_; }

    // Layers above the last scored head contribute nothing to the loss, so
    // forward/backward stop there.
    int layers_needed() const {
        int top = config_.gate.enabled ? config_.gate.l_end - 1 : head_set_.max_layer();
        return top + 1;
    }

    // One optimizer step over grad_accum_steps micro-batches drawn from
    // `instances` starting at `cursor`. Returns metrics for the step.
    StepMetrics train_step(const std::vector<ListwiseInstance>& instances,
                           size_t& cursor) {
        double loss_sum = 0, recall_sum = 0;
        int used = 0;
        for (int micro = 0; micro < config_.grad_accum_steps; ++micro) {
            const ListwiseInstance& inst = instances[cursor % instances.size()];
            ++cursor;
            auto [loss, recall] = accumulate_instance(inst);
            loss_sum += loss;
            recall_sum += recall;
            ++used;
        }
        const Scalar inv = Scalar(1) / Scalar(used);
        scale_grads(inv);
        if (config_.trainable_scope == TrainableScope::SelectedHeadQK) mask_grads();

        StepMetrics m;
        m.step = ++step_;
        m.loss = loss_sum / used;
        m.grad_norm = grad_norm();
        m.recall_at_k = recall_sum / used;
        if (!std::isfinite(m.loss) || !std::isfinite(m.grad_norm))
            abort_step(m);

        if (config_.trainable_scope == TrainableScope::SelectedHeadQK) {
            if (!qk_mask_) qk_mask_ = build_qk_mask();
            auto mask_refs = collect_refs(qk_mask_->emb, qk_mask_->layers);
            opt_.step(param_refs(), grad_refs(), &mask_refs);
        } else {
            opt_.step(param_refs(), grad_refs());
        }
        if (gate_) {
            std::vector<TensorRef<Scalar>> p, g;
            for (auto& w : gate_->w) p.push_back({w.data(), w.size()});
            for (auto& w : gate_grads_->w) g.push_back({w.data(), w.size()});
            gate_opt_->step(p, g);
        }
        zero_grads();
        if (metrics_log_) {
            nlohmann::json j{{"step", m.step},
                             {"loss", m.loss},
                             {"grad_norm", m.grad_norm},
                             {"recall@" + std::to_string(config_.recall_k),
                              m.recall_at_k}};
            (*metrics_log_) << j.dump() << "\n";
            metrics_log_->flush();
        }
        return m;
    }

    void set_metrics_log(const std::string& path) {
        metrics_log_.emplace(path);
        if (!*metrics_log_) throw Error("cannot open metrics log: " + path);
    }

  private:
    // Forward, score, loss, backward for one instance; gradients accumulate.
    // Returns (loss, recall@k on this instance).
    std::pair<double, double> accumulate_instance(const ListwiseInstance& inst) {
        AssembleOptions aopts;
        aopts.with_think_query = config_.gate.enabled;
        PromptLayout layout = assembler_.assemble(inst, aopts);
        Model<Scalar> view = model_.truncate(layers_needed() - 1);
        ForwardTrace<Scalar> trace = view.forward_trace(layout.tokens);
        const int T = static_cast<int>(layout.tokens.size());
        const Span q = layout.query_span;
        const int n_cand = static_cast<int>(layout.chunk_spans.size());

        // Effective head set for this sample.
        HeadSet heads = head_set_;
        std::vector<Vector<Scalar>> gate_dists;  // per gated layer
        std::vector<std::vector<int>> gate_idx;
        if (config_.gate.enabled) {
            heads = HeadSet{};
            const Span tq = *layout.think_query_span;
            for (size_t gi = 0; gi < gate_->w.size(); ++gi) {
                int l = gate_->l_start + static_cast<int>(gi);
                Matrix<Scalar> hq = trace.layers[l].x_in.middleRows(tq.begin, tq.size());
                Vector<Scalar> dist = gate_head_scores(hq, gate_->w[gi]);
                auto [idx, w] = gate_select(dist, gate_->n_per_layer);
                for (size_t x = 0; x < idx.size(); ++x) {
                    heads.heads.push_back(HeadId{l, idx[x]});
                    heads.weights.push_back(w[x]);
                }
                gate_dists.push_back(std::move(dist));
                gate_idx.push_back(std::move(idx));
            }
        }

        // Per-head chunk scores straight from the trace.
        std::map<HeadId, std::vector<double>> per_head;
        for (const auto& head : heads.heads) {
            const Matrix<Scalar>& P = trace.layers[head.layer].probs[head.head];
            std::vector<double> s(n_cand);
            for (int c = 0; c < n_cand; ++c) {
                const Span cs = layout.chunk_spans[c];
                double total = 0;
                for (int t = q.begin; t < q.end; ++t)
                    total += static_cast<double>(
                        P.row(t).segment(cs.begin, cs.size())
                            .template cast<double>().sum());
                s[c] = total / q.size();
            }
            per_head[head] = std::move(s);
        }
        std::vector<double> raw = aggregate_heads(per_head, heads);
        std::vector<double> normed = max_min_norm(raw, config_.scale);
        LossResult lr = group_contrastive_loss(normed, inst.labels);
        std::vector<double> draw = max_min_norm_backward(raw, lr.grad, config_.scale);

        // Inject d loss / d attention-probability at the scored heads.
        BackwardInputs<Scalar> inputs;
        for (size_t hi = 0; hi < heads.heads.size(); ++hi) {
            const HeadId head = heads.heads[hi];
            const double w = heads.weight(hi);
            Matrix<Scalar>& dP =
                inputs.d_probs.try_emplace(head, Matrix<Scalar>::Zero(T, T))
                    .first->second;
            for (int c = 0; c < n_cand; ++c) {
                const Span cs = layout.chunk_spans[c];
                Scalar v = Scalar(draw[c] * w / q.size());
                dP.block(q.begin, cs.begin, q.size(), cs.size()).array() += v;
            }
        }

        // Gate backward: through the renormalized weights and the softmax
        // back into W_l and the residual stream at the gated layer.
        if (config_.gate.enabled) {
            const Span tq = *layout.think_query_span;
            size_t hcursor = 0;
            for (size_t gi = 0; gi < gate_->w.size(); ++gi) {
                int l = gate_->l_start + static_cast<int>(gi);
                const auto& idx = gate_idx[gi];
                const int n = static_cast<int>(idx.size());
                // dL/dw_x for the selected heads of this layer
                std::vector<double> dw(n, 0.0);
                std::vector<double> wsel(n);
                for (int x = 0; x < n; ++x) {
                    const auto& s = per_head.at(heads.heads[hcursor + x]);
                    for (int c = 0; c < n_cand; ++c) dw[x] += draw[c] * s[c];
                    wsel[x] = heads.weights[hcursor + x];
                }
                hcursor += n;
                // renormalization backward
                double gsum = 0;
                for (int x = 0; x < n; ++x)
                    gsum += static_cast<double>(gate_dists[gi](idx[x]));
                Vector<Scalar> ddist = Vector<Scalar>::Zero(gate_dists[gi].size());
                if (gsum > 0) {
                    double mix = 0;
                    for (int x = 0; x < n; ++x) mix += dw[x] * wsel[x];
                    for (int x = 0; x < n; ++x)
                        ddist(idx[x]) = Scalar((dw[x] - mix) / gsum);
                }
                // softmax-mean backward over the bracketed-query tokens
                Matrix<Scalar> hq = trace.layers[l].x_in.middleRows(tq.begin, tq.size());
                Matrix<Scalar> z = hq * gate_->w[gi];
                Matrix<Scalar> dz(z.rows(), z.cols());
                const Scalar invn = Scalar(1) / Scalar(z.rows());
                for (int t = 0; t < z.rows(); ++t) {
                    auto row = z.row(t);
                    Scalar mx = row.maxCoeff();
                    auto e = (row.array() - mx).exp().eval();
                    auto p = (e / e.sum()).eval();
                    auto dp = (ddist.transpose().array() * invn).eval();
                    Scalar dot = (p * dp).sum();
                    dz.row(t) = (p * (dp - dot)).matrix();
                }
                gate_grads_->w[gi] += hq.transpose() * dz;
                Matrix<Scalar>& dlin =
                    inputs.d_layer_input
                        .try_emplace(l, Matrix<Scalar>::Zero(T, model_.config().d_model))
                        .first->second;
                dlin.middleRows(tq.begin, tq.size()) += dz * gate_->w[gi].transpose();
            }
        }

        Grads<Scalar> g = view.backward(trace, inputs);
        add_grads(g);

        double recall = recall_at_k(ranking_of(raw), inst.labels, config_.recall_k,
                                    /*warn_large_k=*/false);
        return {lr.loss, recall};
    }

    template <typename P>
    static std::vector<TensorRef<Scalar>> collect_refs(P& emb,
                                                       std::vector<LayerParams<Scalar>>& layers) {
        std::vector<TensorRef<Scalar>> refs;
        refs.push_back({emb.data(), emb.size()});
        for (auto& l : layers) {
            refs.push_back({l.g1.data(), l.g1.size()});
            refs.push_back({l.g2.data(), l.g2.size()});
            refs.push_back({l.wq.data(), l.wq.size()});
            refs.push_back({l.wk.data(), l.wk.size()});
            refs.push_back({l.wv.data(), l.wv.size()});
            refs.push_back({l.wo.data(), l.wo.size()});
            refs.push_back({l.w1.data(), l.w1.size()});
            refs.push_back({l.w2.data(), l.w2.size()});
        }
        return refs;
    }
    std::vector<TensorRef<Scalar>> param_refs() {
        return collect_refs(model_.params().emb, model_.params().layers);
    }
    std::vector<TensorRef<Scalar>> grad_refs() {
        return collect_refs(grads_.emb, grads_.layers);
    }

    void add_grads(const Grads<Scalar>& g) {
        grads_.emb += g.emb;
        for (size_t l = 0; l < grads_.layers.size(); ++l) {
            grads_.layers[l].g1 += g.layers[l].g1;
            grads_.layers[l].g2 += g.layers[l].g2;
            grads_.layers[l].wq += g.layers[l].wq;
            grads_.layers[l].wk += g.layers[l].wk;
            grads_.layers[l].wv += g.layers[l].wv;
            grads_.layers[l].wo += g.layers[l].wo;
            grads_.layers[l].w1 += g.layers[l].w1;
            grads_.layers[l].w2 += g.layers[l].w2;
        }
    }

    void scale_grads(Scalar f) {
        grads_.emb *= f;
        for (auto& l : grads_.layers) {
            l.g1 *= f; l.g2 *= f;
            l.wq *= f; l.wk *= f; l.wv *= f; l.wo *= f;
            l.w1 *= f; l.w2 *= f;
        }
        if (gate_grads_)
            for (auto& w : gate_grads_->w) w *= f;
    }

    void zero_grads() {
        grads_.setZero();
        if (gate_grads_)
            for (auto& w : gate_grads_->w) w.setZero();
    }

    // selected-head-qk scope: only the query/key projection columns of the
    // selected heads receive updates.
    void mask_grads() {
        const int dh = model_.config().d_head;
        grads_.emb.setZero();
        for (size_t l = 0; l < grads_.layers.size(); ++l) {
            auto& gl = grads_.layers[l];
            gl.g1.setZero(); gl.g2.setZero();
            gl.wv.setZero(); gl.wo.setZero();
            gl.w1.setZero(); gl.w2.setZero();
            Matrix<Scalar> wq = Matrix<Scalar>::Zero(gl.wq.rows(), gl.wq.cols());
            Matrix<Scalar> wk = wq;
            for (const auto& h : head_set_.heads) {
                if (h.layer != static_cast<int>(l)) continue;
                wq.middleCols(h.head * dh, dh) = gl.wq.middleCols(h.head * dh, dh);
                wk.middleCols(h.head * dh, dh) = gl.wk.middleCols(h.head * dh, dh);
            }
            gl.wq = std::move(wq);
            gl.wk = std::move(wk);
        }
    }

    // 1 on the selected heads' query/key columns, 0 elsewhere.
    Grads<Scalar> build_qk_mask() const {
        const int dh = model_.config().d_head;
        Grads<Scalar> mask(model_.config());
        mask.setZero();
        for (size_t l = 0; l < mask.layers.size(); ++l) {
            auto& ml = mask.layers[l];
            for (const auto& h : head_set_.heads) {
                if (h.layer != static_cast<int>(l)) continue;
                ml.wq.middleCols(h.head * dh, dh).setOnes();
                ml.wk.middleCols(h.head * dh, dh).setOnes();
            }
        }
        return mask;
    }

    double grad_norm() const {
        double sq = static_cast<double>(grads_.emb.squaredNorm());
        for (const auto& l : grads_.layers)
            sq += static_cast<double>(l.g1.squaredNorm() + l.g2.squaredNorm() +
                                      l.wq.squaredNorm() + l.wk.squaredNorm() +
                                      l.wv.squaredNorm() + l.wo.squaredNorm() +
                                      l.w1.squaredNorm() + l.w2.squaredNorm());
        if (gate_grads_)
            for (const auto& w : gate_grads_->w)
                sq += static_cast<double>(w.squaredNorm());
        return std::sqrt(sq);
    }

    [[noreturn]] void abort_step(const StepMetrics& m) {
        nlohmann::json snap{{"step", m.step},
                            {"loss", m.loss},
                            {"grad_norm", m.grad_norm}};
        std::ofstream f("train_abort_snapshot.json");
        f << snap.dump(2) << "\n";
        throw Error("non-finite loss or gradient at step " + std::to_string(m.step) +
                    "; diagnostic snapshot written");
    }

    Model<Scalar> model_;
    PromptAssembler assembler_;
    HeadSet head_set_;
    TrainConfig config_;
    Grads<Scalar> grads_;
    AdamW<Scalar> opt_;
    std::optional<GateParams<Scalar>> gate_;
    std::optional<GateParams<Scalar>> gate_grads_;
    std::optional<AdamW<Scalar>> gate_opt_;
    std::optional<std::ofstream> metrics_log_;
    std::optional<Grads<Scalar>> qk_mask_;
    long step_ = 0;
};

}  // namespace attnrank
