// Command-line front end: the full experiment lifecycle (data generation,
// probing, training, reranking, evaluation, benchmarking) plus the HTTP
// rerank service. Float is the working precision throughout.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "attnrank/bench.hpp"
#include "attnrank/data.hpp"
#include "attnrank/metrics.hpp"
#include "attnrank/model.hpp"
#include "attnrank/probe.hpp"
#include "attnrank/prompt.hpp"
#include "attnrank/score.hpp"
#include "attnrank/serve.hpp"
#include "attnrank/train.hpp"

using namespace attnrank;

namespace {

nlohmann::json load_config(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    std::ifstream f(path);
    if (!f) throw ArgumentError("cannot open config file: " + path);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded()) throw ParseError("malformed config file: " + path);
    return j;
}

// Config-file value wins over the default, an explicit flag wins over both.
template <typename T>
void from_config(const nlohmann::json& j, const std::string& key, T& out,
                 const CLI::Option* opt) {
    if (opt->count() == 0 && j.contains(key)) out = j.at(key).template get<T>();
}

InstructionTemplate load_template(const std::string& path) {
    return path.empty() ? InstructionTemplate{} : InstructionTemplate::from_file(path);
}

PromptAssembler make_assembler(const ModelConfig& c, const std::string& tmpl_path) {
    InstructionTemplate tmpl = load_template(tmpl_path);
    return PromptAssembler(Tokenizer::build(c.vocab_size, default_reserved_words(tmpl)),
                           tmpl, c.max_seq_len);
}

Model<float> load_model(const std::string& path, int truncate_after) {
    Model<float> m = Model<float>::load(path);
    if (truncate_after >= 0) m = m.truncate(truncate_after);
    return m;
}

Aggregation parse_aggregation(const std::string& s) {
    if (s == "sum") return Aggregation::Sum;
    if (s == "max") return Aggregation::Max;
    throw ArgumentError("aggregation must be 'sum' or 'max', got '" + s + "'");
}

nlohmann::json metrics_to_json(const RankingMetrics& m, bool any_hit) {
    nlohmann::json j;
    j["definition"] = any_hit ? "any-hit" : "coverage";
    for (const auto& [k, v] : m.recall_at) j["recall_at"][std::to_string(k)] = v;
    for (const auto& [k, v] : m.recall_ceiling_at)
        j["recall_ceiling_at"][std::to_string(k)] = v;
    j["mrr"] = m.mrr;
    j["n_queries"] = m.n_queries;
    j["n_no_gold_in_shortlist"] = m.n_no_gold_in_shortlist;
    return j;
}

// --- subcommand state ----------------------------------------------------

struct InitModelArgs {
    std::string config, out;
    ModelConfig model;
    uint64_t seed = 1;
};

struct GenDataArgs {
    std::string config, out;
    int n_chunks = 500, chunk_len = 4, n_fillers = 64, block_size = 20;
    int n_queries = 1000, k = 50, memory_budget = 512;
    uint64_t seed = 1, query_seed = 2;
    bool use_memory = false, force_gold = false;
};

struct ProbeArgs {
    std::string model, seed_set, out, scores_out, tmpl;
    int top_k = 16, layer_start = -1, layer_end = -1, limit = 1000;
    int truncate_after = -1;
};

struct TrainArgs {
    std::string config, model, data, heads, out_dir, tmpl;
    TrainConfig train;
    std::string scope = "all";
};

struct RerankArgs {
    std::string model, heads, data, out, tmpl, aggregation = "sum";
    bool calibrate = false, no_normalize = false;
    double scale = 8.0;
    int truncate_after = -1;
};

struct EvalArgs {
    std::string model, heads, data, out, tmpl, ks = "1,3,5,10";
    bool any_hit = false, calibrate = false, table = false;
    int truncate_after = -1;
};

struct BenchArgs {
    std::string model, heads, data, tmpl;
    int repetitions = 50, truncate_after = -1;
    bool calibrate = false;
};

struct ServeArgs {
    std::string model, heads, tmpl;
    int max_concurrency = 4, truncate_after = -1;
};

int run_init_model(const InitModelArgs& a) {
    a.model.validate();
    auto m = Model<float>::random_init(a.model, a.seed);
    m.save(a.out);
    std::cerr << "wrote " << a.out << "\n";
    return 0;
}

int run_gen_data(const GenDataArgs& a) {
    CorpusSpec cs;
    cs.n_chunks = a.n_chunks;
    cs.chunk_len = a.chunk_len;
    cs.n_fillers = a.n_fillers;
    cs.block_size = a.block_size;
    cs.seed = a.seed;
    Corpus corpus = generate_corpus(cs);
    auto queries = generate_queries(corpus, cs, a.n_queries, a.query_seed);
    BuildOptions opts;
    opts.use_memory = a.use_memory;
    opts.memory_token_budget = a.memory_budget;
    opts.force_include_gold = a.force_gold;
    auto instances = build_instances(corpus, queries, a.k, opts);
    save_instances(instances, a.out);
    int with_gold = 0;
    for (const auto& i : instances) with_gold += i.gold_in_shortlist();
    std::cerr << "wrote " << instances.size() << " instances (" << with_gold
              << " with shortlisted gold) to " << a.out << "\n";
    return 0;
}

int run_probe(const ProbeArgs& a) {
    Model<float> model = load_model(a.model, a.truncate_after);
    PromptAssembler asmb = make_assembler(model.config(), a.tmpl);
    auto instances = load_instances(a.seed_set);
    if (a.limit > 0 && static_cast<int>(instances.size()) > a.limit)
        instances.resize(a.limit);
    auto table = probe_heads(model, asmb, instances);
    HeadSet hs = (a.layer_start >= 0 || a.layer_end >= 0)
                     ? select_layer_range(table, a.layer_start, a.layer_end, a.top_k)
                     : select_top_heads(table, a.top_k);
    save_head_set(hs, a.out);
    if (!a.scores_out.empty()) save_score_table(table, a.scores_out);
    std::cerr << "probed " << table.seed_count << " instances, wrote "
              << hs.heads.size() << " heads to " << a.out << "\n";
    return 0;
}

int run_train(TrainArgs a) {
    if (a.scope == "all")
        a.train.trainable_scope = TrainableScope::All;
    else if (a.scope == "selected-head-qk")
        a.train.trainable_scope = TrainableScope::SelectedHeadQK;
    else
        throw ArgumentError("scope must be 'all' or 'selected-head-qk'");
    a.train.validate();

    Model<float> model = Model<float>::load(a.model);
    PromptAssembler asmb = make_assembler(model.config(), a.tmpl);
    HeadSet hs;
    if (!a.heads.empty()) hs = load_head_set(a.heads);
    if (hs.heads.empty() && !a.train.gate.enabled)
        throw ArgumentError("train: need --heads unless --gate is enabled");

    auto all = load_instances(a.data);
    std::vector<ListwiseInstance> data;
    for (auto& i : all)
        if (i.gold_in_shortlist()) data.push_back(std::move(i));
    if (data.empty()) throw ArgumentError("train: no instances with shortlisted gold");
    std::cerr << "training on " << data.size() << " of " << all.size()
              << " instances\n";

    std::filesystem::create_directories(a.out_dir);
    Trainer<float> trainer(model, asmb, hs, a.train);
    trainer.set_metrics_log((std::filesystem::path(a.out_dir) / "metrics.jsonl").string());

    long steps_per_epoch =
        std::max<long>(1, static_cast<long>(data.size()) / a.train.grad_accum_steps);
    size_t cursor = 0;
    long step = 0;
    for (int e = 0; e < a.train.epochs; ++e) {
        double loss_sum = 0;
        for (long s = 0; s < steps_per_epoch; ++s) {
            auto m = trainer.train_step(data, cursor);
            loss_sum += m.loss;
            ++step;
            if (a.train.checkpoint_every > 0 && step % a.train.checkpoint_every == 0)
                trainer.model().save((std::filesystem::path(a.out_dir) /
                                      ("step-" + std::to_string(step) + ".ckpt"))
                                         .string());
        }
        std::cerr << "epoch " << e << " mean loss " << loss_sum / steps_per_epoch
                  << "\n";
    }
    std::string final_path = (std::filesystem::path(a.out_dir) / "model.ckpt").string();
    trainer.model().save(final_path);
    std::cerr << "wrote " << final_path << "\n";
    return 0;
}

RerankOptions rerank_options(bool calibrate, bool no_normalize, double scale,
                             const std::string& aggregation) {
    RerankOptions opts;
    opts.calibrate = calibrate;
    opts.normalize = !no_normalize;
    opts.scale = scale;
    opts.aggregation = parse_aggregation(aggregation);
    return opts;
}

int run_rerank(const RerankArgs& a) {
    Model<float> model = load_model(a.model, a.truncate_after);
    PromptAssembler asmb = make_assembler(model.config(), a.tmpl);
    Reranker<float> rr(model, asmb, load_head_set(a.heads), a.heads);
    auto opts = rerank_options(a.calibrate, a.no_normalize, a.scale, a.aggregation);

    auto instances = load_instances(a.data);
    std::ofstream out(a.out);
    if (!out) throw Error("cannot open for writing: " + a.out);
    for (const auto& inst : instances) {
        ScoreVector sv = rr.rerank(inst, opts);
        nlohmann::json j{{"instance_id", inst.instance_id},
                         {"scores", sv.scores},
                         {"ranking", sv.ranking},
                         {"provenance",
                          {{"head_set_id", sv.provenance.head_set_id},
                           {"calibrated", sv.provenance.calibrated},
                           {"normalized", sv.provenance.normalized},
                           {"aggregation", to_string(sv.provenance.aggregation)}}}};
        out << j.dump() << "\n";
    }
    std::cerr << "reranked " << instances.size() << " instances to " << a.out << "\n";
    return 0;
}

int run_eval(const EvalArgs& a) {
    Model<float> model = load_model(a.model, a.truncate_after);
    PromptAssembler asmb = make_assembler(model.config(), a.tmpl);
    Reranker<float> rr(model, asmb, load_head_set(a.heads), a.heads);
    RerankOptions opts;
    opts.calibrate = a.calibrate;

    std::vector<int> ks;
    for (const auto& part : [](std::string s) {
             std::vector<std::string> out;
             std::replace(s.begin(), s.end(), ',', ' ');
             std::istringstream ss(s);
             std::string w;
             while (ss >> w) out.push_back(w);
             return out;
         }(a.ks))
        ks.push_back(std::stoi(part));
    if (ks.empty()) throw ArgumentError("eval: empty k list");

    auto instances = load_instances(a.data);
    auto metrics = evaluate(
        instances,
        [&](const ListwiseInstance& i) { return rr.rerank(i, opts).ranking; }, ks,
        a.any_hit);

    if (a.table) {
        std::printf("%-10s", "metric");
        for (int k : ks) std::printf(" R@%-7d", k);
        std::printf(" %-8s\n", "MRR");
        std::printf("%-10s", "value");
        for (int k : ks) std::printf(" %-8.4f", metrics.recall_at[k]);
        std::printf(" %-8.4f\n", metrics.mrr);
    }
    nlohmann::json j = metrics_to_json(metrics, a.any_hit);
    if (a.out.empty()) {
        std::cout << j.dump(2) << "\n";
    } else {
        std::ofstream f(a.out);
        if (!f) throw Error("cannot open for writing: " + a.out);
        f << j.dump(2) << "\n";
    }
    return 0;
}

int run_bench(const BenchArgs& a) {
    Model<float> model = load_model(a.model, a.truncate_after);
    PromptAssembler asmb = make_assembler(model.config(), a.tmpl);
    Reranker<float> rr(model, asmb, load_head_set(a.heads), a.heads);
    RerankOptions opts;
    opts.calibrate = a.calibrate;
    auto instances = load_instances(a.data);
    auto rep = bench(rr, instances, a.repetitions, opts);
    nlohmann::json j{{"latency_p50_ms", rep.latency_p50_ms},
                     {"latency_p95_ms", rep.latency_p95_ms},
                     {"flops_per_query", rep.flops_per_query},
                     {"peak_memory_bytes", rep.peak_memory_bytes},
                     {"n_queries", rep.n_queries},
                     {"active_layers", model.active_layers()}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

int run_serve(const ServeArgs& a) {
    Model<float> model = load_model(a.model, a.truncate_after);
    PromptAssembler asmb = make_assembler(model.config(), a.tmpl);
    auto reranker = std::make_shared<Reranker<float>>(model, asmb,
                                                      load_head_set(a.heads), a.heads);
    RerankService<float> service(reranker, a.model, a.heads, a.max_concurrency);

    const char* bind_env = std::getenv("ATTNRANK_BIND");
    std::string bind = bind_env ? bind_env : "127.0.0.1:8080";
    auto colon = bind.rfind(':');
    if (colon == std::string::npos)
        throw ArgumentError("ATTNRANK_BIND must be host:port, got '" + bind + "'");
    std::string host = bind.substr(0, colon);
    int port = std::stoi(bind.substr(colon + 1));

    const char* log_env = std::getenv("ATTNRANK_LOG");
    bool log_requests = log_env && std::string(log_env) == "info";

    httplib::Server server;
    service.install_routes(server);
    if (log_requests)
        server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
            std::cerr << "{\"method\":\"" << req.method << "\",\"path\":\"" << req.path
                      << "\",\"status\":" << res.status << "}\n";
        });
    std::cerr << "serving on " << host << ":" << port << "\n";
    if (!server.listen(host, port))
        throw Error("cannot bind " + host + ":" + std::to_string(port));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attention-head listwise reranking laboratory"};
    app.require_subcommand(1);

    InitModelArgs im;
    auto* init_cmd = app.add_subcommand("init-model", "create a random checkpoint");
    auto* im_cfg = init_cmd->add_option("--config", im.config, "JSON config file");
    auto* im_layers = init_cmd->add_option("--layers", im.model.n_layers);
    auto* im_heads = init_cmd->add_option("--heads", im.model.n_heads);
    auto* im_dmodel = init_cmd->add_option("--d-model", im.model.d_model);
    auto* im_dhead = init_cmd->add_option("--d-head", im.model.d_head);
    auto* im_dffn = init_cmd->add_option("--d-ffn", im.model.d_ffn);
    auto* im_vocab = init_cmd->add_option("--vocab", im.model.vocab_size);
    auto* im_seq = init_cmd->add_option("--max-seq-len", im.model.max_seq_len);
    auto* im_seed = init_cmd->add_option("--seed", im.seed);
    init_cmd->add_option("--out", im.out, "checkpoint path")->required();

    GenDataArgs gd;
    auto* gen_cmd = app.add_subcommand("gen-data", "generate listwise instances");
    auto* gd_cfg = gen_cmd->add_option("--config", gd.config, "JSON config file");
    auto* gd_nc = gen_cmd->add_option("--n-chunks", gd.n_chunks);
    auto* gd_cl = gen_cmd->add_option("--chunk-len", gd.chunk_len);
    auto* gd_nf = gen_cmd->add_option("--n-fillers", gd.n_fillers);
    auto* gd_bs = gen_cmd->add_option("--block-size", gd.block_size);
    auto* gd_nq = gen_cmd->add_option("--n-queries", gd.n_queries);
    auto* gd_k = gen_cmd->add_option("--k", gd.k, "shortlist size");
    auto* gd_seed = gen_cmd->add_option("--seed", gd.seed);
    auto* gd_qseed = gen_cmd->add_option("--query-seed", gd.query_seed);
    auto* gd_mem = gen_cmd->add_flag("--use-memory", gd.use_memory);
    auto* gd_budget = gen_cmd->add_option("--memory-budget", gd.memory_budget);
    auto* gd_force = gen_cmd->add_flag("--force-gold", gd.force_gold);
    gen_cmd->add_option("--out", gd.out, "instances JSONL path")->required();

    ProbeArgs pr;
    auto* probe_cmd = app.add_subcommand("probe", "score heads on a seed set");
    probe_cmd->add_option("--model", pr.model)->required();
    probe_cmd->add_option("--seed-set", pr.seed_set, "instances JSONL")->required();
    probe_cmd->add_option("--top-k", pr.top_k);
    probe_cmd->add_option("--layer-start", pr.layer_start);
    probe_cmd->add_option("--layer-end", pr.layer_end, "half-open upper bound");
    probe_cmd->add_option("--limit", pr.limit, "max probed instances (0 = all)");
    probe_cmd->add_option("--truncate-after", pr.truncate_after);
    probe_cmd->add_option("--template", pr.tmpl);
    probe_cmd->add_option("--scores-out", pr.scores_out, "score table JSONL");
    probe_cmd->add_option("--out", pr.out, "head set path")->required();

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "contrastive head training");
    auto* tr_cfg = train_cmd->add_option("--config", tr.config, "JSON config file");
    train_cmd->add_option("--model", tr.model)->required();
    train_cmd->add_option("--data", tr.data)->required();
    train_cmd->add_option("--heads", tr.heads);
    train_cmd->add_option("--template", tr.tmpl);
    train_cmd->add_option("--out-dir", tr.out_dir)->required();
    auto* tr_lr = train_cmd->add_option("--lr", tr.train.learning_rate);
    auto* tr_ga = train_cmd->add_option("--grad-accum", tr.train.grad_accum_steps);
    auto* tr_ep = train_cmd->add_option("--epochs", tr.train.epochs);
    auto* tr_sc = train_cmd->add_option("--scale", tr.train.scale);
    auto* tr_seed = train_cmd->add_option("--seed", tr.train.seed);
    auto* tr_wd = train_cmd->add_option("--weight-decay", tr.train.weight_decay);
    auto* tr_rk = train_cmd->add_option("--recall-k", tr.train.recall_k);
    auto* tr_ck = train_cmd->add_option("--checkpoint-every", tr.train.checkpoint_every);
    auto* tr_scope =
        train_cmd->add_option("--scope", tr.scope, "all | selected-head-qk");
    auto* tr_gate = train_cmd->add_flag("--gate", tr.train.gate.enabled);
    auto* tr_gs = train_cmd->add_option("--gate-start", tr.train.gate.l_start);
    auto* tr_ge = train_cmd->add_option("--gate-end", tr.train.gate.l_end);
    auto* tr_gn = train_cmd->add_option("--gate-n", tr.train.gate.n_per_layer);

    RerankArgs rk;
    auto* rerank_cmd = app.add_subcommand("rerank", "score and rank instances");
    rerank_cmd->add_option("--model", rk.model)->required();
    rerank_cmd->add_option("--heads", rk.heads)->required();
    rerank_cmd->add_option("--data", rk.data)->required();
    rerank_cmd->add_option("--out", rk.out, "rankings JSONL path")->required();
    rerank_cmd->add_option("--template", rk.tmpl);
    rerank_cmd->add_flag("--calibrate", rk.calibrate);
    rerank_cmd->add_flag("--no-normalize", rk.no_normalize);
    rerank_cmd->add_option("--scale", rk.scale);
    rerank_cmd->add_option("--aggregation", rk.aggregation, "sum | max");
    rerank_cmd->add_option("--truncate-after", rk.truncate_after,
                           "run layers 0..=N only");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "ranking metrics on labeled data");
    eval_cmd->add_option("--model", ev.model)->required();
    eval_cmd->add_option("--heads", ev.heads)->required();
    eval_cmd->add_option("--data", ev.data)->required();
    eval_cmd->add_option("--ks", ev.ks, "comma-separated cutoffs");
    eval_cmd->add_option("--out", ev.out, "JSON output path (default stdout)");
    eval_cmd->add_option("--template", ev.tmpl);
    eval_cmd->add_flag("--any-hit", ev.any_hit, "any-hit recall instead of coverage");
    eval_cmd->add_flag("--calibrate", ev.calibrate);
    eval_cmd->add_flag("--table", ev.table, "also print an aligned table");
    eval_cmd->add_option("--truncate-after", ev.truncate_after);

    BenchArgs bn;
    auto* bench_cmd = app.add_subcommand("bench", "latency and flops report");
    bench_cmd->add_option("--model", bn.model)->required();
    bench_cmd->add_option("--heads", bn.heads)->required();
    bench_cmd->add_option("--data", bn.data)->required();
    bench_cmd->add_option("--repetitions", bn.repetitions);
    bench_cmd->add_option("--template", bn.tmpl);
    bench_cmd->add_flag("--calibrate", bn.calibrate);
    bench_cmd->add_option("--truncate-after", bn.truncate_after);

    ServeArgs sv;
    auto* serve_cmd = app.add_subcommand("serve", "HTTP rerank service");
    serve_cmd->add_option("--model", sv.model)->required();
    serve_cmd->add_option("--heads", sv.heads)->required();
    serve_cmd->add_option("--template", sv.tmpl);
    serve_cmd->add_option("--max-concurrency", sv.max_concurrency);
    serve_cmd->add_option("--truncate-after", sv.truncate_after);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::fprintf(stderr, "error category=usage message=\"%s\"\n", e.what());
        return 2;
    }

    try {
        if (*init_cmd) {
            auto j = load_config(im.config);
            from_config(j, "n_layers", im.model.n_layers, im_layers);
            from_config(j, "n_heads", im.model.n_heads, im_heads);
            from_config(j, "d_model", im.model.d_model, im_dmodel);
            from_config(j, "d_head", im.model.d_head, im_dhead);
            from_config(j, "d_ffn", im.model.d_ffn, im_dffn);
            from_config(j, "vocab_size", im.model.vocab_size, im_vocab);
            from_config(j, "max_seq_len", im.model.max_seq_len, im_seq);
            from_config(j, "seed", im.seed, im_seed);
            (void)im_cfg;
            return run_init_model(im);
        }
        if (*gen_cmd) {
            auto j = load_config(gd.config);
            from_config(j, "n_chunks", gd.n_chunks, gd_nc);
            from_config(j, "chunk_len", gd.chunk_len, gd_cl);
            from_config(j, "n_fillers", gd.n_fillers, gd_nf);
            from_config(j, "block_size", gd.block_size, gd_bs);
            from_config(j, "n_queries", gd.n_queries, gd_nq);
            from_config(j, "k", gd.k, gd_k);
            from_config(j, "seed", gd.seed, gd_seed);
            from_config(j, "query_seed", gd.query_seed, gd_qseed);
            from_config(j, "use_memory", gd.use_memory, gd_mem);
            from_config(j, "memory_budget", gd.memory_budget, gd_budget);
            from_config(j, "force_gold", gd.force_gold, gd_force);
            (void)gd_cfg;
            return run_gen_data(gd);
        }
        if (*probe_cmd) return run_probe(pr);
        if (*train_cmd) {
            auto j = load_config(tr.config);
            from_config(j, "learning_rate", tr.train.learning_rate, tr_lr);
            from_config(j, "grad_accum_steps", tr.train.grad_accum_steps, tr_ga);
            from_config(j, "epochs", tr.train.epochs, tr_ep);
            from_config(j, "scale", tr.train.scale, tr_sc);
            from_config(j, "seed", tr.train.seed, tr_seed);
            from_config(j, "weight_decay", tr.train.weight_decay, tr_wd);
            from_config(j, "recall_k", tr.train.recall_k, tr_rk);
            from_config(j, "checkpoint_every", tr.train.checkpoint_every, tr_ck);
            from_config(j, "trainable_scope", tr.scope, tr_scope);
            from_config(j, "gate", tr.train.gate.enabled, tr_gate);
            from_config(j, "gate_start", tr.train.gate.l_start, tr_gs);
            from_config(j, "gate_end", tr.train.gate.l_end, tr_ge);
            from_config(j, "gate_n", tr.train.gate.n_per_layer, tr_gn);
            (void)tr_cfg;
            return run_train(tr);
        }
        if (*rerank_cmd) return run_rerank(rk);
        if (*eval_cmd) return run_eval(ev);
        if (*bench_cmd) return run_bench(bn);
        if (*serve_cmd) return run_serve(sv);
    } catch (const ArgumentError& e) {
        std::fprintf(stderr, "error category=usage message=\"%s\"\n", e.what());
        return 2;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error category=data message=\"%s\"\n", e.what());
        return 1;
    } catch (const Error& e) {
        std::fprintf(stderr, "error category=runtime message=\"%s\"\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error category=internal message=\"%s\"\n", e.what());
        return 1;
    }
    return 0;
}
