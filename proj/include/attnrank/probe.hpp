#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <vector>

#include "attnrank/model.hpp"
#include "attnrank/prompt.hpp"
#include "attnrank/types.hpp"
#include "json.hpp"

namespace attnrank {

struct HeadScoreTable {
    std::map<HeadId, double> mean_scores;
    int seed_count = 0;
};

// Per-head query-focused retrieval score: mean over query tokens of the
// attention mass landing on gold-chunk tokens.
template <typename Scalar>
std::map<HeadId, double> qr_score(const AttentionCapture<Scalar>& capture,
                                  const PromptLayout& layout,
                                  const std::set<int>& gold_indices) {
    if (gold_indices.empty()) throw ArgumentError("qr_score: empty gold set");
    for (int g : gold_indices)
        if (g < 0 || g >= static_cast<int>(layout.chunk_spans.size()))
            throw ArgumentError("qr_score: gold index out of range");

    const Span q = layout.query_span;
    std::vector<int> qrows;
    for (int t = q.begin; t < q.end; ++t) qrows.push_back(capture.row_index(t));

    std::map<HeadId, double> out;
    for (const auto& [head, rows] : capture.entries) {
        double total = 0;
        for (int g : gold_indices) {
            const Span c = layout.chunk_spans[g];
            for (int qi : qrows)
                total += static_cast<double>(
                    rows.row(qi).segment(c.begin, c.size()).template cast<double>().sum());
        }
        out[head] = total / q.size();
    }
    return out;
}

// Accumulates per-instance score maps into a dataset mean, equal weight per
// seed instance.
class HeadScoreAccumulator {
  public:
    void add(const std::map<HeadId, double>& scores) {
        for (const auto& [head, s] : scores) sums_[head] += s;
        ++count_;
    }

    HeadScoreTable table() const {
        if (count_ == 0) throw ArgumentError("no probed instances");
        HeadScoreTable t;
        t.seed_count = count_;
        for (const auto& [head, s] : sums_) t.mean_scores[head] = s / count_;
        return t;
    }

  private:
    std::map<HeadId, double> sums_;
    int count_ = 0;
};

namespace detail {

inline std::vector<std::pair<HeadId, double>> sorted_desc(
    const std::map<HeadId, double>& scores) {
    std::vector<std::pair<HeadId, double>> v(scores.begin(), scores.end());
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;  // tie-break: (layer, head) ascending
    });
    return v;
}

}  // namespace detail

inline HeadSet select_top_heads(const HeadScoreTable& table, int k) {
    if (table.mean_scores.empty()) throw ArgumentError("select_top_heads: empty table");
    if (k > static_cast<int>(table.mean_scores.size()))
        throw ArgumentError("select_top_heads: k exceeds head count");
    auto sorted = detail::sorted_desc(table.mean_scores);
    HeadSet hs;
    for (int i = 0; i < k; ++i) hs.heads.push_back(sorted[i].first);
    return hs;
}

// Per-layer top-n selection over a half-open layer range [l_start, l_end);
// the range width must divide k_total.
inline HeadSet select_layer_range(const HeadScoreTable& table, int l_start, int l_end,
                                  int k_total) {
    int width = l_end - l_start;
    if (width <= 0) throw ArgumentError("select_layer_range: empty range");
    if (k_total % width != 0) {
        std::string widths;
        for (int w = 1; w <= k_total; ++w)
            if (k_total % w == 0) widths += (widths.empty() ? "" : ",") + std::to_string(w);
        throw ArgumentError("select_layer_range: range width " + std::to_string(width) +
                            " does not divide k_total " + std::to_string(k_total) +
                            "; valid widths: " + widths);
    }
    int per_layer = k_total / width;
    HeadSet hs;
    for (int l = l_start; l < l_end; ++l) {
        std::map<HeadId, double> layer_scores;
        for (const auto& [head, s] : table.mean_scores)
            if (head.layer == l) layer_scores[head] = s;
        if (static_cast<int>(layer_scores.size()) < per_layer)
            throw ArgumentError("select_layer_range: layer " + std::to_string(l) +
                                " has fewer than " + std::to_string(per_layer) +
                                " probed heads");
        auto sorted = detail::sorted_desc(layer_scores);
        for (int i = 0; i < per_layer; ++i) hs.heads.push_back(sorted[i].first);
    }
    return hs;
}

// Probe a model over a seed set: one forward per instance capturing the
// query rows of every head, scored against the instance's gold chunks.
// Instances without a shortlisted gold chunk are skipped.
template <typename Scalar>
HeadScoreTable probe_heads(const Model<Scalar>& model, const PromptAssembler& assembler,
                           const std::vector<ListwiseInstance>& seed_set) {
    HeadScoreAccumulator acc;
    for (const auto& inst : seed_set) {
        if (!inst.gold_in_shortlist()) continue;
        PromptLayout layout = assembler.assemble(inst);
        auto capture = model.forward_with_attention(layout.tokens, layout.query_rows());
        std::set<int> gold;
        for (size_t i = 0; i < inst.labels.size(); ++i)
            if (inst.labels[i]) gold.insert(static_cast<int>(i));
        acc.add(qr_score(capture, layout, gold));
    }
    return acc.table();
}

// --- persistence ---------------------------------------------------------

// Head sets as text lines "l-h" (optionally "l-h weight").
inline void save_head_set(const HeadSet& hs, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open for writing: " + path);
    for (size_t i = 0; i < hs.heads.size(); ++i) {
        f << hs.heads[i].str();
        if (!hs.weights.empty()) f << " " << hs.weights[i];
        f << "\n";
    }
}

inline HeadSet load_head_set(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open: " + path);
    HeadSet hs;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string id;
        ss >> id;
        try {
            hs.heads.push_back(HeadId::parse(id));
        } catch (const ParseError& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        double w;
        if (ss >> w) hs.weights.push_back(w);
    }
    if (!hs.weights.empty() && hs.weights.size() != hs.heads.size())
        throw ParseError(path + ": weights on some lines but not all");
    hs.validate();
    return hs;
}

// Score tables as JSON-Lines: {layer, head, score, seed_count}.
inline void save_score_table(const HeadScoreTable& table, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open for writing: " + path);
    for (const auto& [head, s] : table.mean_scores) {
        nlohmann::json j{{"layer", head.layer},
                         {"head", head.head},
                         {"score", s},
                         {"seed_count", table.seed_count}};
        f << j.dump() << "\n";
    }
}

inline HeadScoreTable load_score_table(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open: " + path);
    HeadScoreTable t;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ParseError(path + ":" + std::to_string(lineno) + ": malformed line");
        t.mean_scores[HeadId{j.at("layer"), j.at("head")}] = j.at("score");
        t.seed_count = j.at("seed_count");
    }
    return t;
}

}  // namespace attnrank
