#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "attnrank/common.hpp"
#include "attnrank/types.hpp"
#include "json.hpp"

namespace attnrank {

template <typename Scalar>
struct LayerParams {
    Vector<Scalar> g1, g2;        // rms gains
    Matrix<Scalar> wq, wk, wv, wo;  // d x d
    Matrix<Scalar> w1;            // d x ffn
    Matrix<Scalar> w2;            // ffn x d
};

template <typename Scalar>
struct Params {
    ModelConfig config;
    Matrix<Scalar> emb;  // vocab x d
    std::vector<LayerParams<Scalar>> layers;
};

// Parameter-shaped gradient accumulator.
template <typename Scalar>
struct Grads {
    Matrix<Scalar> emb;
    std::vector<LayerParams<Scalar>> layers;

    explicit Grads(const ModelConfig& c) {
        emb = Matrix<Scalar>::Zero(c.vocab_size, c.d_model);
        layers.resize(c.n_layers);
        for (auto& l : layers) {
            l.g1 = Vector<Scalar>::Zero(c.d_model);
            l.g2 = Vector<Scalar>::Zero(c.d_model);
            l.wq = Matrix<Scalar>::Zero(c.d_model, c.d_model);
            l.wk = Matrix<Scalar>::Zero(c.d_model, c.d_model);
            l.wv = Matrix<Scalar>::Zero(c.d_model, c.d_model);
            l.wo = Matrix<Scalar>::Zero(c.d_model, c.d_model);
            l.w1 = Matrix<Scalar>::Zero(c.d_model, c.d_ffn);
            l.w2 = Matrix<Scalar>::Zero(c.d_ffn, c.d_model);
        }
    }

    void setZero() {
        emb.setZero();
        for (auto& l : layers) {
            l.g1.setZero(); l.g2.setZero();
            l.wq.setZero(); l.wk.setZero(); l.wv.setZero(); l.wo.setZero();
            l.w1.setZero(); l.w2.setZero();
        }
    }
};

// Cached activations for one forward pass, consumed by backward().
template <typename Scalar>
struct ForwardTrace {
    TokenSeq tokens;
    int n_layers_run = 0;
    struct Layer {
        Matrix<Scalar> x_in, xhat1, qr, kr, v, ctx, x_mid, xhat2, hpre, hact;
        Vector<Scalar> rms1, rms2;
        std::vector<Matrix<Scalar>> probs;  // per head, T x T causal rows
    };
    std::vector<Layer> layers;
};

// Gradients injected at attention-probability nodes: per head a T x T
// matrix (zero where unused), plus optional gradients w.r.t. the residual
// stream entering a layer (gate variant).
template <typename Scalar>
struct BackwardInputs {
    std::map<HeadId, Matrix<Scalar>> d_probs;
    std::map<int, Matrix<Scalar>> d_layer_input;  // layer -> T x d
};

namespace detail {

template <typename Scalar>
inline void apply_rope(Eigen::Ref<Matrix<Scalar>> block, int d_head, Scalar theta,
                       bool inverse) {
    const int T = static_cast<int>(block.rows());
    for (int t = 0; t < T; ++t) {
        for (int i = 0; i * 2 < d_head; ++i) {
            Scalar freq = std::pow(theta, -Scalar(2 * i) / Scalar(d_head));
            Scalar ang = Scalar(t) * freq * (inverse ? Scalar(-1) : Scalar(1));
            Scalar c = std::cos(ang), s = std::sin(ang);
            Scalar x = block(t, 2 * i), y = block(t, 2 * i + 1);
            block(t, 2 * i) = x * c - y * s;
            block(t, 2 * i + 1) = x * s + y * c;
        }
    }
}

template <typename Scalar>
inline Vector<Scalar> rmsnorm_fwd(const Matrix<Scalar>& x, const Vector<Scalar>& g,
                                  Matrix<Scalar>& xhat) {
    const Scalar eps = Scalar(1e-6);
    const int T = static_cast<int>(x.rows()), d = static_cast<int>(x.cols());
    Vector<Scalar> rms(T);
    xhat.resize(T, d);
    for (int t = 0; t < T; ++t) {
        Scalar r = std::sqrt(x.row(t).squaredNorm() / Scalar(d) + eps);
        rms(t) = r;
        xhat.row(t) = (x.row(t) / r).cwiseProduct(g.transpose());
    }
    return rms;
}

template <typename Scalar>
inline Matrix<Scalar> rmsnorm_bwd(const Matrix<Scalar>& x, const Vector<Scalar>& g,
                                  const Vector<Scalar>& rms,
                                  const Matrix<Scalar>& dxhat, Vector<Scalar>& dg) {
    const int T = static_cast<int>(x.rows()), d = static_cast<int>(x.cols());
    Matrix<Scalar> dx(T, d);
    for (int t = 0; t < T; ++t) {
        Scalar r = rms(t);
        dg += dxhat.row(t).cwiseProduct(x.row(t) / r).transpose();
        auto du = dxhat.row(t).cwiseProduct(g.transpose());
        Scalar dot = du.cwiseProduct(x.row(t)).sum();
        dx.row(t) = du / r - x.row(t) * (dot / (Scalar(d) * r * r * r));
    }
    return dx;
}

template <typename Scalar>
inline Scalar silu(Scalar x) {
    return x / (Scalar(1) + std::exp(-x));
}

template <typename Scalar>
inline Scalar silu_grad(Scalar x) {
    Scalar s = Scalar(1) / (Scalar(1) + std::exp(-x));
    return s * (Scalar(1) + x * (Scalar(1) - s));
}

}  // namespace detail

// Decoder-only transformer with rotary positions, pre-norm residual blocks
// and exposed post-softmax attention. Parameters are shared between views;
// truncate() returns a view running only a layer prefix. Inference never
// mutates parameters, so any number of concurrent forwards may share a model.
template <typename Scalar>
class Model {
  public:
    Model() = default;

    static Model random_init(const ModelConfig& config, uint64_t seed) {
        config.validate();
        auto p = std::make_shared<Params<Scalar>>();
        p->config = config;
        Rng rng = derive_rng(seed, 0);
        std::normal_distribution<double> dist(0.0, 0.02);
        auto fill = [&](Matrix<Scalar>& m, int r, int c) {
            m.resize(r, c);
            for (int j = 0; j < c; ++j)
                for (int i = 0; i < r; ++i) m(i, j) = Scalar(dist(rng));
        };
        fill(p->emb, config.vocab_size, config.d_model);
        p->layers.resize(config.n_layers);
        for (auto& l : p->layers) {
            l.g1 = Vector<Scalar>::Ones(config.d_model);
            l.g2 = Vector<Scalar>::Ones(config.d_model);
            fill(l.wq, config.d_model, config.d_model);
            fill(l.wk, config.d_model, config.d_model);
            fill(l.wv, config.d_model, config.d_model);
            fill(l.wo, config.d_model, config.d_model);
            fill(l.w1, config.d_model, config.d_ffn);
            fill(l.w2, config.d_ffn, config.d_model);
        }
        Model m;
        m.params_ = std::move(p);
        m.active_layers_ = config.n_layers;
        if (config.truncate_after_layer)
            m.active_layers_ = *config.truncate_after_layer + 1;
        return m;
    }

    const ModelConfig& config() const { return params_->config; }
    int active_layers() const { return active_layers_; }
    Params<Scalar>& params() { return *params_; }
    const Params<Scalar>& params() const { return *params_; }
    const std::string& id() const { return id_; }
    void set_id(std::string id) { id_ = std::move(id); }

    // View running layers 0..=after_layer. Shares parameters with *this.
    Model truncate(int after_layer) const {
        if (after_layer < 0 || after_layer >= params_->config.n_layers)
            throw ArgumentError("truncate: layer " + std::to_string(after_layer) +
                                " outside [0," +
                                std::to_string(params_->config.n_layers) + ")");
        Model m = *this;
        m.active_layers_ = after_layer + 1;
        return m;
    }

    AttentionCapture<Scalar> forward_with_attention(
        const TokenSeq& tokens, const std::vector<int>& capture_rows,
        const HeadSet* head_filter = nullptr) const {
        check_tokens(tokens);
        if (capture_rows.empty())
            throw ArgumentError("forward_with_attention: empty capture set");
        const int T = static_cast<int>(tokens.size());
        std::vector<int> rows = capture_rows;
        std::sort(rows.begin(), rows.end());
        rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
        if (rows.front() < 0 || rows.back() >= T)
            throw ArgumentError("forward_with_attention: capture row out of bounds");

        AttentionCapture<Scalar> cap;
        cap.captured_rows = rows;
        cap.prompt_len = T;

        run_forward(tokens, nullptr, &cap, head_filter);
        return cap;
    }

    // Full forward keeping every activation; required for backward().
    ForwardTrace<Scalar> forward_trace(const TokenSeq& tokens) const {
        check_tokens(tokens);
        ForwardTrace<Scalar> trace;
        trace.tokens = tokens;
        run_forward(tokens, &trace, nullptr, nullptr);
        return trace;
    }

    // Reverse pass from injected attention-probability gradients down to all
    // parameters of the layers that were run.
    Grads<Scalar> backward(const ForwardTrace<Scalar>& trace,
                           const BackwardInputs<Scalar>& inputs) const {
        const ModelConfig& c = params_->config;
        const int T = static_cast<int>(trace.tokens.size());
        const int dh = c.d_head;
        const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
        Grads<Scalar> g(c);

        Matrix<Scalar> dx = Matrix<Scalar>::Zero(T, c.d_model);
        for (int l = trace.n_layers_run - 1; l >= 0; --l) {
            const auto& tl = trace.layers[l];
            const auto& pl = params_->layers[l];
            auto& gl = g.layers[l];

            // mlp branch
            const Matrix<Scalar>& dout = dx;
            gl.w2 += tl.hact.transpose() * dout;
            Matrix<Scalar> dhact = dout * pl.w2.transpose();
            Matrix<Scalar> dhpre =
                dhact.binaryExpr(tl.hpre, [](Scalar dy, Scalar x) {
                    return dy * detail::silu_grad(x);
                });
            gl.w1 += tl.xhat2.transpose() * dhpre;
            Matrix<Scalar> dxhat2 = dhpre * pl.w1.transpose();
            Matrix<Scalar> dx_mid =
                dx + detail::rmsnorm_bwd(tl.x_mid, pl.g2, tl.rms2, dxhat2, gl.g2);

            // attention branch
            gl.wo += tl.ctx.transpose() * dx_mid;
            Matrix<Scalar> dctx = dx_mid * pl.wo.transpose();
            Matrix<Scalar> dq = Matrix<Scalar>::Zero(T, c.d_model);
            Matrix<Scalar> dk = Matrix<Scalar>::Zero(T, c.d_model);
            Matrix<Scalar> dv = Matrix<Scalar>::Zero(T, c.d_model);
            for (int h = 0; h < c.n_heads; ++h) {
                const Matrix<Scalar>& P = tl.probs[h];
                auto qh = tl.qr.middleCols(h * dh, dh);
                auto kh = tl.kr.middleCols(h * dh, dh);
                auto vh = tl.v.middleCols(h * dh, dh);
                Matrix<Scalar> dP = dctx.middleCols(h * dh, dh) * vh.transpose();
                auto inj = inputs.d_probs.find(HeadId{l, h});
                if (inj != inputs.d_probs.end()) dP += inj->second;
                dv.middleCols(h * dh, dh) +=
                    P.transpose() * dctx.middleCols(h * dh, dh);
                // softmax backward, causal rows
                Matrix<Scalar> dz(T, T);
                for (int t = 0; t < T; ++t) {
                    auto p = P.row(t).head(t + 1).array();
                    auto dp = dP.row(t).head(t + 1).array();
                    Scalar dot = (p * dp).sum();
                    dz.row(t).head(t + 1) = (p * (dp - dot)).matrix();
                    dz.row(t).tail(T - t - 1).setZero();
                }
                dq.middleCols(h * dh, dh) += scale * (dz * kh);
                dk.middleCols(h * dh, dh) += scale * (dz.transpose() * qh);
                detail::apply_rope<Scalar>(dq.middleCols(h * dh, dh), dh,
                                           Scalar(c.rope_theta), true);
                detail::apply_rope<Scalar>(dk.middleCols(h * dh, dh), dh,
                                           Scalar(c.rope_theta), true);
            }
            gl.wq += tl.xhat1.transpose() * dq;
            gl.wk += tl.xhat1.transpose() * dk;
            gl.wv += tl.xhat1.transpose() * dv;
            Matrix<Scalar> dxhat1 = dq * pl.wq.transpose() + dk * pl.wk.transpose() +
                                    dv * pl.wv.transpose();
            dx = dx_mid +
                 detail::rmsnorm_bwd(tl.x_in, pl.g1, tl.rms1, dxhat1, gl.g1);

            auto gate_inj = inputs.d_layer_input.find(l);
            if (gate_inj != inputs.d_layer_input.end()) dx += gate_inj->second;
        }
        for (int t = 0; t < T; ++t) g.emb.row(trace.tokens[t]) += dx.row(t);
        return g;
    }

    void save(const std::string& path) const;
    static Model load(const std::string& path);

  private:
    void check_tokens(const TokenSeq& tokens) const {
        const ModelConfig& c = params_->config;
        if (static_cast<int>(tokens.size()) > c.max_seq_len)
            throw LengthError("sequence length " + std::to_string(tokens.size()) +
                              " exceeds max_seq_len " + std::to_string(c.max_seq_len));
        if (tokens.empty()) throw ArgumentError("empty token sequence");
        for (TokenId t : tokens)
            if (t < 0 || t >= c.vocab_size)
                throw ArgumentError("token id out of vocabulary");
    }

    void run_forward(const TokenSeq& tokens, ForwardTrace<Scalar>* trace,
                     AttentionCapture<Scalar>* cap,
                     const HeadSet* head_filter) const {
        const ModelConfig& c = params_->config;
        const int T = static_cast<int>(tokens.size());
        const int dh = c.d_head;
        const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));

        Matrix<Scalar> x(T, c.d_model);
        for (int t = 0; t < T; ++t) x.row(t) = params_->emb.row(tokens[t]);

        if (trace) {
            trace->layers.resize(active_layers_);
            trace->n_layers_run = active_layers_;
        }

        Matrix<Scalar> xhat1, xhat2;
        for (int l = 0; l < active_layers_; ++l) {
            const auto& pl = params_->layers[l];
            Vector<Scalar> rms1 = detail::rmsnorm_fwd(x, pl.g1, xhat1);
            Matrix<Scalar> q = xhat1 * pl.wq;
            Matrix<Scalar> k = xhat1 * pl.wk;
            Matrix<Scalar> v = xhat1 * pl.wv;
            for (int h = 0; h < c.n_heads; ++h) {
                detail::apply_rope<Scalar>(q.middleCols(h * dh, dh), dh,
                                           Scalar(c.rope_theta), false);
                detail::apply_rope<Scalar>(k.middleCols(h * dh, dh), dh,
                                           Scalar(c.rope_theta), false);
            }
            Matrix<Scalar> ctx(T, c.d_model);
            std::vector<Matrix<Scalar>> probs;
            if (trace) probs.resize(c.n_heads);
            for (int h = 0; h < c.n_heads; ++h) {
                Matrix<Scalar> z = scale * (q.middleCols(h * dh, dh) *
                                            k.middleCols(h * dh, dh).transpose());
                Matrix<Scalar> P = Matrix<Scalar>::Zero(T, T);
                for (int t = 0; t < T; ++t) {
                    auto row = z.row(t).head(t + 1);
                    Scalar mx = row.maxCoeff();
                    auto e = (row.array() - mx).exp().eval();
                    P.row(t).head(t + 1) = (e / e.sum()).matrix();
                }
                ctx.middleCols(h * dh, dh) = P * v.middleCols(h * dh, dh);
                HeadId id{l, h};
                if (cap && (!head_filter || head_filter->contains(id))) {
                    Matrix<Scalar> rows(cap->captured_rows.size(), T);
                    for (size_t i = 0; i < cap->captured_rows.size(); ++i)
                        rows.row(i) = P.row(cap->captured_rows[i]);
                    cap->entries.emplace(id, std::move(rows));
                }
                if (trace) probs[h] = std::move(P);
            }
            Matrix<Scalar> x_mid = x + ctx * pl.wo;
            Vector<Scalar> rms2 = detail::rmsnorm_fwd(x_mid, pl.g2, xhat2);
            Matrix<Scalar> hpre = xhat2 * pl.w1;
            Matrix<Scalar> hact = hpre.unaryExpr([](Scalar v_) {
                return detail::silu(v_);
            });
            Matrix<Scalar> x_next = x_mid + hact * pl.w2;
            if (trace) {
                auto& tl = trace->layers[l];
                tl.x_in = std::move(x);
                tl.xhat1 = xhat1;
                tl.rms1 = std::move(rms1);
                tl.qr = std::move(q);
                tl.kr = std::move(k);
                tl.v = std::move(v);
                tl.probs = std::move(probs);
                tl.ctx = std::move(ctx);
                tl.xhat2 = xhat2;
                tl.rms2 = std::move(rms2);
                tl.hpre = std::move(hpre);
                tl.hact = std::move(hact);
                tl.x_mid = std::move(x_mid);
            }
            x = std::move(x_next);
        }
    }

    std::shared_ptr<Params<Scalar>> params_;
    int active_layers_ = 0;
    std::string id_ = "unsaved";
};

// --- checkpoint serialization -------------------------------------------
//
// Single self-describing binary: magic, version, JSON header (config plus a
// tensor directory), then raw column-major tensor data. Round-trips
// bit-exactly.

namespace detail {

inline constexpr char kCkptMagic[8] = {'A', 'T', 'N', 'R', 'C', 'K', 'P', 'T'};

template <typename Scalar>
const char* dtype_name() {
    if constexpr (std::is_same_v<Scalar, float>) return "f32";
    else if constexpr (std::is_same_v<Scalar, double>) return "f64";
    else return "unknown";
}

}  // namespace detail

template <typename Scalar>
void Model<Scalar>::save(const std::string& path) const {
    const ModelConfig& c = params_->config;
    nlohmann::json header;
    header["config"] = {{"n_layers", c.n_layers},   {"n_heads", c.n_heads},
                        {"d_model", c.d_model},     {"d_head", c.d_head},
                        {"d_ffn", c.d_ffn},         {"vocab_size", c.vocab_size},
                        {"max_seq_len", c.max_seq_len},
                        {"rope_theta", c.rope_theta}};
    if (c.truncate_after_layer)
        header["config"]["truncate_after_layer"] = *c.truncate_after_layer;
    header["dtype"] = detail::dtype_name<Scalar>();

    std::vector<std::pair<std::string, const Matrix<Scalar>*>> tensors;
    tensors.emplace_back("emb", &params_->emb);
    std::vector<Matrix<Scalar>> gain_mats;
    gain_mats.reserve(2 * c.n_layers);
    for (int l = 0; l < c.n_layers; ++l) {
        const auto& pl = params_->layers[l];
        std::string p = "layers." + std::to_string(l) + ".";
        gain_mats.push_back(pl.g1);
        tensors.emplace_back(p + "g1", &gain_mats.back());
        tensors.emplace_back(p + "wq", &pl.wq);
        tensors.emplace_back(p + "wk", &pl.wk);
        tensors.emplace_back(p + "wv", &pl.wv);
        tensors.emplace_back(p + "wo", &pl.wo);
        gain_mats.push_back(pl.g2);
        tensors.emplace_back(p + "g2", &gain_mats.back());
        tensors.emplace_back(p + "w1", &pl.w1);
        tensors.emplace_back(p + "w2", &pl.w2);
    }
    nlohmann::json dir = nlohmann::json::array();
    for (auto& [name, m] : tensors)
        dir.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
    header["tensors"] = dir;
    std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint for writing: " + path);
    f.write(detail::kCkptMagic, 8);
    uint32_t version = 1, hlen = static_cast<uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(hs.data(), hs.size());
    for (auto& [name, m] : tensors)
        f.write(reinterpret_cast<const char*>(m->data()),
                static_cast<std::streamsize>(sizeof(Scalar) * m->size()));
    if (!f) throw Error("short write while saving checkpoint: " + path);
}

template <typename Scalar>
Model<Scalar> Model<Scalar>::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint: " + path);
    char magic[8];
    uint32_t version = 0, hlen = 0;
    f.read(magic, 8);
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&hlen), 4);
    if (!f || std::memcmp(magic, detail::kCkptMagic, 8) != 0 || version != 1)
        throw ParseError("not a model checkpoint: " + path);
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
    if (header.is_discarded()) throw ParseError("corrupt checkpoint header: " + path);
    if (header.value("dtype", "") != detail::dtype_name<Scalar>())
        throw ParseError("checkpoint dtype mismatch: " + path);

    ModelConfig c;
    const auto& jc = header.at("config");
    c.n_layers = jc.at("n_layers");
    c.n_heads = jc.at("n_heads");
    c.d_model = jc.at("d_model");
    c.d_head = jc.at("d_head");
    c.d_ffn = jc.at("d_ffn");
    c.vocab_size = jc.at("vocab_size");
    c.max_seq_len = jc.at("max_seq_len");
    c.rope_theta = jc.value("rope_theta", 10000.0f);
    if (jc.contains("truncate_after_layer"))
        c.truncate_after_layer = jc.at("truncate_after_layer").get<int>();
    c.validate();

    auto p = std::make_shared<Params<Scalar>>();
    p->config = c;
    p->layers.resize(c.n_layers);
    auto read_mat = [&](Matrix<Scalar>& m, const nlohmann::json& t) {
        m.resize(t.at("rows").get<long>(), t.at("cols").get<long>());
        f.read(reinterpret_cast<char*>(m.data()),
               static_cast<std::streamsize>(sizeof(Scalar) * m.size()));
    };
    for (const auto& t : header.at("tensors")) {
        std::string name = t.at("name");
        if (name == "emb") {
            read_mat(p->emb, t);
            continue;
        }
        auto dot1 = name.find('.'), dot2 = name.find('.', name.find('.') + 1);
        int l = std::stoi(name.substr(dot1 + 1, dot2 - dot1 - 1));
        std::string field = name.substr(dot2 + 1);
        auto& pl = p->layers.at(l);
        Matrix<Scalar> tmp;
        if (field == "g1" || field == "g2") {
            read_mat(tmp, t);
            (field == "g1" ? pl.g1 : pl.g2) = tmp.col(0);
        } else {
            Matrix<Scalar>& dst = field == "wq"   ? pl.wq
                                  : field == "wk" ? pl.wk
                                  : field == "wv" ? pl.wv
                                  : field == "wo" ? pl.wo
                                  : field == "w1" ? pl.w1
                                                  : pl.w2;
            read_mat(dst, t);
        }
    }
    if (!f) throw ParseError("truncated checkpoint: " + path);

    Model m;
    m.params_ = std::move(p);
    m.active_layers_ = c.truncate_after_layer ? *c.truncate_after_layer + 1
                                              : c.n_layers;
    m.set_id(path);
    return m;
}

}  // namespace attnrank
