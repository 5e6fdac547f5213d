#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "attnrank/common.hpp"
#include "json.hpp"

namespace attnrank {

struct Chunk {
    std::string id;
    std::string text;  // space-separated symbols
    int block_id = 0;
};

// block_id -> summary text
using SummaryMap = std::map<int, std::string>;

struct Corpus {
    std::vector<Chunk> chunks;
    int block_size = 20;
    SummaryMap summaries;
};

struct Query {
    std::string id;
    std::string text;
    std::vector<std::string> gold_ids;
};

struct ListwiseInstance {
    std::string instance_id;
    std::string query;
    std::vector<Chunk> candidates;  // first-stage ranking order
    std::vector<bool> labels;       // parallel to candidates
    std::optional<std::string> memory_prefix;
    bool forced_gold = false;

    bool gold_in_shortlist() const {
        return std::any_of(labels.begin(), labels.end(), [](bool b) { return b; });
    }

    void validate() const {
        if (candidates.size() != labels.size())
            throw ArgumentError("instance " + instance_id +
                                ": candidates/labels length mismatch");
        if (candidates.size() < 2)
            throw ArgumentError("instance " + instance_id + ": needs >= 2 candidates");
    }
};

struct CorpusSpec {
    int n_chunks = 500;
    int chunk_len = 4;   // tokens per chunk, including key and value
    int n_fillers = 64;  // shared filler symbol pool
    int block_size = 20;
    uint64_t seed = 1;
};

// Symbol naming convention shared by the generator and the tokenizer setup:
// keys "w0..", values and fillers draw from the same generic pool, but keys
// occupy a dedicated range so uniqueness is by construction.
inline std::string key_symbol(int i) { return "w" + std::to_string(i); }

// Each chunk embeds a unique key-value fact: "key value filler...". Queries
// later ask for a key, so the chunk carrying it is the gold evidence.
inline Corpus generate_corpus(const CorpusSpec& spec) {
    if (spec.n_chunks < 60)
        throw ArgumentError("generate_corpus: need n_chunks >= 60");
    if (spec.chunk_len < 4)
        throw ArgumentError("generate_corpus: need chunk_len >= 4");
    if (spec.n_fillers < 2)
        throw GenerationError("generate_corpus: filler vocabulary too small");

    // symbol pool layout: [0, n_chunks) keys, [n_chunks, 2n) values,
    // [2n, 2n + n_fillers) fillers
    const int val_base = spec.n_chunks;
    const int filler_base = 2 * spec.n_chunks;

    Corpus corpus;
    corpus.block_size = spec.block_size;
    Rng rng = derive_rng(spec.seed, 0);
    std::uniform_int_distribution<int> filler_dist(0, spec.n_fillers - 1);
    for (int i = 0; i < spec.n_chunks; ++i) {
        Chunk c;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "c%05d", i);
        c.id = buf;
        c.block_id = i / spec.block_size;
        c.text = key_symbol(i) + " " + key_symbol(val_base + i);
        for (int j = 2; j < spec.chunk_len; ++j)
            c.text += " " + key_symbol(filler_base + filler_dist(rng));
        corpus.chunks.push_back(std::move(c));
    }

    // Synthetic block summaries: first and last key of the block.
    int n_blocks = (spec.n_chunks + spec.block_size - 1) / spec.block_size;
    for (int b = 0; b < n_blocks; ++b) {
        int lo = b * spec.block_size;
        int hi = std::min(spec.n_chunks, lo + spec.block_size) - 1;
        std::string s = "summary covers keys";
        for (int i = lo; i <= hi; ++i) s += " " + key_symbol(i);
        corpus.summaries[b] = std::move(s);
    }
    return corpus;
}

// Queries name one key plus a couple of filler symbols, so first-stage
// overlap ranking neither misses the gold chunk nor pins it to rank one.
inline std::vector<Query> generate_queries(const Corpus& corpus,
                                           const CorpusSpec& spec, int n_queries,
                                           uint64_t seed) {
    std::vector<Query> out;
    const int filler_base = 2 * spec.n_chunks;
    for (int q = 0; q < n_queries; ++q) {
        Rng rng = derive_rng(seed, 1000 + q);
        std::uniform_int_distribution<int> chunk_dist(0, spec.n_chunks - 1);
        std::uniform_int_distribution<int> filler_dist(0, spec.n_fillers - 1);
        int target = chunk_dist(rng);
        Query query;
        query.id = "q" + std::to_string(q);
        query.text = "find " + key_symbol(target) + " " +
                     key_symbol(filler_base + filler_dist(rng)) + " " +
                     key_symbol(filler_base + filler_dist(rng));
        query.gold_ids = {corpus.chunks[target].id};
        out.push_back(std::move(query));
    }
    return out;
}

namespace detail {

inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && text[i] == ' ') ++i;
        size_t j = i;
        while (j < text.size() && text[j] != ' ') ++j;
        if (j > i) out.push_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace detail

// Unigram-overlap first-stage retriever: candidates ordered by the number of
// distinct query symbols present in the chunk, ties broken by chunk id.
inline std::vector<Chunk> first_stage_retrieve(const std::string& query,
                                               const Corpus& corpus, int K) {
    if (K > static_cast<int>(corpus.chunks.size()))
        throw ArgumentError("first_stage_retrieve: K exceeds corpus size");
    auto words = detail::split_words(query);
    if (words.empty()) throw ArgumentError("first_stage_retrieve: empty query");
    std::set<std::string> qset(words.begin(), words.end());

    std::vector<std::pair<int, const Chunk*>> scored;
    scored.reserve(corpus.chunks.size());
    for (const auto& c : corpus.chunks) {
        auto cwords = detail::split_words(c.text);
        std::set<std::string> cset(cwords.begin(), cwords.end());
        int overlap = 0;
        for (const auto& w : qset) overlap += cset.count(w);
        scored.emplace_back(overlap, &c);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) {
                         if (a.first != b.first) return a.first > b.first;
                         return a.second->id < b.second->id;
                     });
    std::vector<Chunk> out;
    out.reserve(K);
    for (int i = 0; i < K; ++i) out.push_back(*scored[i].second);
    return out;
}

// Greedy maximum-coverage summary selection under a token budget, emitted in
// first-appearance order of the covered blocks.
inline std::string build_memory_prefix(const std::vector<Chunk>& candidates,
                                       const SummaryMap& summaries,
                                       int token_budget = 512) {
    std::vector<int> block_order;  // first appearance
    std::map<int, int> cover_count;
    for (const auto& c : candidates) {
        if (!cover_count.count(c.block_id)) block_order.push_back(c.block_id);
        cover_count[c.block_id]++;
    }
    auto tokens_of = [](const std::string& s) {
        return static_cast<int>(detail::split_words(s).size());
    };
    std::set<int> selected;
    int used = 0;
    while (true) {
        int best = -1, best_cover = 0;
        for (int b : block_order) {
            if (selected.count(b)) continue;
            auto it = summaries.find(b);
            if (it == summaries.end())
                throw ArgumentError("missing summary for block " + std::to_string(b));
            if (used + tokens_of(it->second) > token_budget) continue;
            if (cover_count[b] > best_cover) {
                best = b;
                best_cover = cover_count[b];
            }
        }
        if (best < 0) break;
        selected.insert(best);
        used += tokens_of(summaries.at(best));
    }
    std::string prefix;
    for (int b : block_order) {
        if (!selected.count(b)) continue;
        if (!prefix.empty()) prefix += " ";
        prefix += summaries.at(b);
    }
    return prefix;
}

struct BuildOptions {
    bool use_memory = false;
    int memory_token_budget = 512;
    bool force_include_gold = false;
};

// Listwise instance assembly: shortlist, binary labels against the gold set,
// optional de-duplicated summary prefix. Queries whose gold set misses the
// shortlist are kept (all-negative labels) for recall-ceiling accounting.
inline std::vector<ListwiseInstance> build_instances(
    const Corpus& corpus, const std::vector<Query>& queries, int K,
    const BuildOptions& opts = {}) {
    std::vector<ListwiseInstance> out;
    for (const auto& q : queries) {
        if (q.gold_ids.empty())
            throw ArgumentError("query " + q.id + " has no gold chunks");
        ListwiseInstance inst;
        inst.instance_id = q.id;
        inst.query = q.text;
        inst.candidates = first_stage_retrieve(q.text, corpus, K);
        std::set<std::string> gold(q.gold_ids.begin(), q.gold_ids.end());

        if (opts.force_include_gold) {
            std::set<std::string> present;
            for (const auto& c : inst.candidates) present.insert(c.id);
            size_t replace_at = inst.candidates.size();
            for (const auto& gid : gold) {
                if (present.count(gid)) continue;
                auto it = std::find_if(corpus.chunks.begin(), corpus.chunks.end(),
                                       [&](const Chunk& c) { return c.id == gid; });
                if (it == corpus.chunks.end()) continue;
                inst.candidates[--replace_at] = *it;
                inst.forced_gold = true;
            }
        }

        for (const auto& c : inst.candidates)
            inst.labels.push_back(gold.count(c.id) > 0);
        if (opts.use_memory)
            inst.memory_prefix = build_memory_prefix(inst.candidates, corpus.summaries,
                                                     opts.memory_token_budget);
        out.push_back(std::move(inst));
    }
    return out;
}

// --- JSON-Lines persistence ---------------------------------------------

inline nlohmann::json instance_to_json(const ListwiseInstance& inst) {
    nlohmann::json j;
    j["instance_id"] = inst.instance_id;
    j["query"] = inst.query;
    j["candidates"] = nlohmann::json::array();
    for (const auto& c : inst.candidates)
        j["candidates"].push_back(
            {{"id", c.id}, {"text", c.text}, {"block_id", c.block_id}});
    j["labels"] = inst.labels;
    if (inst.memory_prefix) j["memory_prefix"] = *inst.memory_prefix;
    if (inst.forced_gold) j["forced_gold"] = true;
    return j;
}

inline ListwiseInstance instance_from_json(const nlohmann::json& j) {
    ListwiseInstance inst;
    inst.instance_id = j.at("instance_id");
    inst.query = j.at("query");
    for (const auto& c : j.at("candidates"))
        inst.candidates.push_back(
            {c.at("id"), c.at("text"), c.at("block_id").get<int>()});
    inst.labels = j.at("labels").get<std::vector<bool>>();
    if (j.contains("memory_prefix") && !j.at("memory_prefix").is_null())
        inst.memory_prefix = j.at("memory_prefix").get<std::string>();
    inst.forced_gold = j.value("forced_gold", false);
    return inst;
}

inline void save_instances(const std::vector<ListwiseInstance>& instances,
                           const std::string& path) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open for writing: " + path);
    for (const auto& inst : instances) f << instance_to_json(inst).dump() << "\n";
    if (!f) throw Error("short write: " + path);
}

// All-or-nothing: a malformed line fails the whole load with its line number.
inline std::vector<ListwiseInstance> load_instances(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open: " + path);
    std::vector<ListwiseInstance> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": malformed JSON line");
        try {
            out.push_back(instance_from_json(j));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace attnrank
