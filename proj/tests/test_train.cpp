#include "catch2/catch_amalgamated.hpp"
#include "helpers.hpp"

using namespace attnrank;
using Catch::Approx;

namespace {

std::vector<ListwiseInstance> trainable_instances(int n, uint64_t seed = 5) {
    auto all = testhelp::tiny_instances(4 * n, 6, seed);
    std::vector<ListwiseInstance> out;
    for (auto& i : all) {
        if (i.gold_in_shortlist()) out.push_back(std::move(i));
        if (static_cast<int>(out.size()) == n) break;
    }
    REQUIRE(static_cast<int>(out.size()) == n);
    return out;
}

template <typename Scalar>
Params<Scalar> clone_params(const Model<Scalar>& m) {
    return m.params();
}

template <typename Scalar>
bool params_equal(const Params<Scalar>& a, const Params<Scalar>& b) {
    if (!(a.emb.array() == b.emb.array()).all()) return false;
    for (size_t l = 0; l < a.layers.size(); ++l) {
        const auto& x = a.layers[l];
        const auto& y = b.layers[l];
        if (!(x.g1.array() == y.g1.array()).all()) return false;
        if (!(x.g2.array() == y.g2.array()).all()) return false;
        if (!(x.wq.array() == y.wq.array()).all()) return false;
        if (!(x.wk.array() == y.wk.array()).all()) return false;
        if (!(x.wv.array() == y.wv.array()).all()) return false;
        if (!(x.wo.array() == y.wo.array()).all()) return false;
        if (!(x.w1.array() == y.w1.array()).all()) return false;
        if (!(x.w2.array() == y.w2.array()).all()) return false;
    }
    return true;
}

HeadSet all_heads(const ModelConfig& c) {
    HeadSet hs;
    for (int l = 0; l < c.n_layers; ++l)
        for (int h = 0; h < c.n_heads; ++h) hs.heads.push_back({l, h});
    return hs;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters unchanged") {
    auto model = Model<float>::random_init(testhelp::tiny_config(), 29);
    auto before = clone_params(model);
    TrainConfig tc;
    tc.learning_rate = 0.0;
    tc.grad_accum_steps = 2;
    Trainer<float> trainer(model, testhelp::make_assembler(), all_heads(model.config()),
                           tc);
    auto data = trainable_instances(4);
    size_t cursor = 0;
    auto m = trainer.train_step(data, cursor);
    REQUIRE(std::isfinite(m.loss));
    REQUIRE(m.grad_norm > 0.0);
    REQUIRE(params_equal(before, trainer.model().params()));
}

TEST_CASE("train config validation") {
    TrainConfig tc;
    tc.learning_rate = -1;
    REQUIRE_THROWS_AS(tc.validate(), ArgumentError);
    tc = TrainConfig{};
    tc.grad_accum_steps = 0;
    REQUIRE_THROWS_AS(tc.validate(), ArgumentError);
    tc = TrainConfig{};
    tc.gate.enabled = true;
    tc.gate.l_end = 0;
    tc.gate.n_per_layer = 1;
    REQUIRE_THROWS_AS(tc.validate(), ArgumentError);
}

TEST_CASE("a single instance is overfit within 200 steps") {
    auto model = Model<float>::random_init(testhelp::tiny_config(), 37);
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.grad_accum_steps = 1;
    Trainer<float> trainer(model, testhelp::make_assembler(), all_heads(model.config()),
                           tc);
    std::vector<ListwiseInstance> one = {trainable_instances(1)[0]};
    size_t cursor = 0;
    double initial = trainer.train_step(one, cursor).loss;
    double last = initial;
    for (int s = 1; s < 200; ++s) last = trainer.train_step(one, cursor).loss;
    INFO("initial=" << initial << " final=" << last);
    REQUIRE(last < 0.1 * initial);
}

TEST_CASE("analytic gradients match finite differences through the full path") {
    auto cfg = testhelp::tiny_config();
    auto model = Model<double>::random_init(cfg, 41);
    auto asmb = testhelp::make_assembler();
    auto hs = all_heads(cfg);
    auto inst = trainable_instances(1, 11)[0];
    auto [loss, grads] = testhelp::instance_loss_grads(model, asmb, hs, inst, 8.0);
    REQUIRE(std::isfinite(loss));

    Rng rng = derive_rng(91, 0);
    auto check_coord = [&](double* p, double analytic) {
        const double h = 1e-5;
        double keep = *p;
        *p = keep + h;
        double up = testhelp::instance_loss(model, asmb, hs, inst, 8.0);
        *p = keep - h;
        double dn = testhelp::instance_loss(model, asmb, hs, inst, 8.0);
        *p = keep;
        double fd = (up - dn) / (2 * h);
        if (std::abs(fd - analytic) > 1e-10)
            REQUIRE(std::abs(fd - analytic) / std::max(std::abs(fd), std::abs(analytic)) <
                    1e-4);
    };
    auto& P = model.params();
    for (int it = 0; it < 10; ++it) {
        int l = static_cast<int>(rng() % cfg.n_layers);
        auto& pl = P.layers[l];
        auto& gl = grads.layers[l];
        long i = static_cast<long>(rng() % pl.wq.size());
        check_coord(pl.wq.data() + i, gl.wq.data()[i]);
        check_coord(pl.wk.data() + i, gl.wk.data()[i]);
        check_coord(pl.wv.data() + i, gl.wv.data()[i]);
        check_coord(pl.wo.data() + i, gl.wo.data()[i]);
        long j = static_cast<long>(rng() % pl.w1.size());
        check_coord(pl.w1.data() + j, gl.w1.data()[j]);
        check_coord(pl.w2.data() + j, gl.w2.data()[j]);
        long k = static_cast<long>(rng() % pl.g1.size());
        check_coord(pl.g1.data() + k, gl.g1.data()[k]);
        check_coord(pl.g2.data() + k, gl.g2.data()[k]);
    }
}

TEST_CASE("selected-head-qk scope only updates the selected projections") {
    auto cfg = testhelp::tiny_config();
    auto model = Model<float>::random_init(cfg, 43);
    auto before = clone_params(model);
    HeadSet hs;
    hs.heads = {{0, 1}, {1, 0}};
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.grad_accum_steps = 1;
    tc.trainable_scope = TrainableScope::SelectedHeadQK;
    Trainer<float> trainer(model, testhelp::make_assembler(), hs, tc);
    auto data = trainable_instances(3);
    size_t cursor = 0;
    for (int s = 0; s < 3; ++s) trainer.train_step(data, cursor);

    const auto& after = trainer.model().params();
    REQUIRE((after.emb.array() == before.emb.array()).all());
    const int dh = cfg.d_head;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& a = after.layers[l];
        const auto& b = before.layers[l];
        REQUIRE((a.wv.array() == b.wv.array()).all());
        REQUIRE((a.wo.array() == b.wo.array()).all());
        REQUIRE((a.w1.array() == b.w1.array()).all());
        REQUIRE((a.g1.array() == b.g1.array()).all());
        for (int h = 0; h < cfg.n_heads; ++h) {
            bool selected = hs.contains({l, h});
            auto aq = a.wq.middleCols(h * dh, dh);
            auto bq = b.wq.middleCols(h * dh, dh);
            auto ak = a.wk.middleCols(h * dh, dh);
            auto bk = b.wk.middleCols(h * dh, dh);
            if (selected) {
                REQUIRE_FALSE((aq.array() == bq.array()).all());
                REQUIRE_FALSE((ak.array() == bk.array()).all());
            } else {
                REQUIRE((aq.array() == bq.array()).all());
                REQUIRE((ak.array() == bk.array()).all());
            }
        }
    }
}

TEST_CASE("gate head scores are per-layer distributions") {
    const int d = 16, n_heads = 4;
    Matrix<float> w = Matrix<float>::Zero(d, n_heads);
    Matrix<float> hq = Matrix<float>::Random(5, d);
    auto uniform = gate_head_scores(hq, w);
    for (int h = 0; h < n_heads; ++h)
        REQUIRE(uniform(h) == Approx(1.0 / n_heads).margin(1e-6));

    w = Matrix<float>::Random(d, n_heads);
    auto dist = gate_head_scores(hq, w);
    REQUIRE(dist.sum() == Approx(1.0).margin(1e-6));
    for (int h = 0; h < n_heads; ++h) REQUIRE(dist(h) >= 0.0f);

    // single-token span: the mean is that token's softmax row
    Matrix<float> one = hq.topRows(1);
    auto single = gate_head_scores(one, w);
    Vector<float> z = (one * w).row(0);
    float mx = z.maxCoeff();
    Vector<float> e = (z.array() - mx).exp();
    e /= e.sum();
    for (int h = 0; h < n_heads; ++h)
        REQUIRE(single(h) == Approx(e(h)).margin(1e-6));

    Matrix<float> empty_rows = Matrix<float>::Zero(0, d);
    Matrix<float> bad_cols = Matrix<float>::Zero(2, d + 1);
    REQUIRE_THROWS_AS(gate_head_scores(empty_rows, w), ArgumentError);
    REQUIRE_THROWS_AS(gate_head_scores(bad_cols, w), ArgumentError);
}

TEST_CASE("gate selection renormalizes the top-n") {
    Vector<float> uniform = Vector<float>::Constant(4, 0.25f);
    auto [idx, w] = gate_select(uniform, 2);
    REQUIRE(idx == std::vector<int>{0, 1});  // tie-break: lower index
    REQUIRE(w[0] == Approx(0.5));
    REQUIRE(w[1] == Approx(0.5));

    Vector<float> dominant(4);
    dominant << 0.001f, 0.99f, 0.004f, 0.005f;
    auto [di, dw] = gate_select(dominant, 2);
    REQUIRE(di == std::vector<int>{1, 3});
    REQUIRE(dw[0] > 0.99);

    Rng rng = derive_rng(53, 0);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    for (int it = 0; it < 20; ++it) {
        Vector<float> s(8);
        for (int i = 0; i < 8; ++i) s(i) = u(rng);
        s /= s.sum();
        auto [ri, rw] = gate_select(s, 4);
        REQUIRE(ri.size() == 4);
        double total = 0;
        for (double x : rw) total += x;
        REQUIRE(total == Approx(1.0).margin(1e-6));
    }
    REQUIRE_THROWS_AS(gate_select(uniform, 0), ArgumentError);
    REQUIRE_THROWS_AS(gate_select(uniform, 5), ArgumentError);
}

TEST_CASE("gated training reaches the gate parameters") {
    auto cfg = testhelp::tiny_config();
    auto model = Model<float>::random_init(cfg, 47);
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.grad_accum_steps = 2;
    tc.gate.enabled = true;
    tc.gate.l_start = 0;
    tc.gate.l_end = 2;
    tc.gate.n_per_layer = 2;
    Trainer<float> trainer(model, testhelp::make_assembler(), HeadSet{}, tc);
    REQUIRE(trainer.layers_needed() == 2);
    auto data = trainable_instances(4);
    size_t cursor = 0;
    for (int s = 0; s < 2; ++s) {
        auto m = trainer.train_step(data, cursor);
        REQUIRE(std::isfinite(m.loss));
    }
    double gate_norm = 0;
    for (const auto& w : trainer.gate().w) gate_norm += w.squaredNorm();
    REQUIRE(gate_norm > 0.0);
}

TEST_CASE("metrics log records one json line per step") {
    testhelp::TempDir dir("train-log");
    auto model = Model<float>::random_init(testhelp::tiny_config(), 49);
    TrainConfig tc;
    tc.learning_rate = 1e-4;
    tc.grad_accum_steps = 1;
    Trainer<float> trainer(model, testhelp::make_assembler(), all_heads(model.config()),
                           tc);
    trainer.set_metrics_log(dir.file("metrics.jsonl"));
    auto data = trainable_instances(2);
    size_t cursor = 0;
    for (int s = 0; s < 3; ++s) trainer.train_step(data, cursor);
    std::ifstream f(dir.file("metrics.jsonl"));
    std::string line;
    int n = 0;
    while (std::getline(f, line)) {
        auto j = nlohmann::json::parse(line);
        REQUIRE(j.at("step") == n + 1);
        REQUIRE(j.contains("loss"));
        REQUIRE(j.contains("grad_norm"));
        REQUIRE(j.contains("recall@1"));
        ++n;
    }
    REQUIRE(n == 3);
}
