#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "attnrank/data.hpp"
#include "attnrank/tokenizer.hpp"
#include "json.hpp"

namespace attnrank {

// Instruction boilerplate is configuration data so experiments can vary the
// wording without code changes.
struct InstructionTemplate {
    std::string memory_header =
        "Here are some session summaries that may help answer the query:";
    std::string chunks_header = "Here are some retrieved chunks:";
    std::string query_header = "Query:";

    // Every distinct word, in first-use order; these get reserved tokenizer ids.
    std::vector<std::string> words() const {
        std::vector<std::string> out;
        for (const std::string* s : {&memory_header, &chunks_header, &query_header})
            for (const auto& w : detail::split_words(*s))
                if (std::find(out.begin(), out.end(), w) == out.end())
                    out.push_back(w);
        return out;
    }

    static InstructionTemplate from_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw Error("cannot open template file: " + path);
        nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
        if (j.is_discarded()) throw ParseError("malformed template file: " + path);
        InstructionTemplate t;
        t.memory_header = j.value("memory_header", t.memory_header);
        t.chunks_header = j.value("chunks_header", t.chunks_header);
        t.query_header = j.value("query_header", t.query_header);
        return t;
    }
};

// Words the synthetic generator may emit beyond the generic symbol pool.
inline std::vector<std::string> default_reserved_words(
    const InstructionTemplate& tmpl = {}) {
    std::vector<std::string> out = tmpl.words();
    for (const char* w : {"find", "summary", "covers", "keys"})
        if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
    return out;
}

struct Span {
    int begin = 0;
    int end = 0;  // half-open

    int size() const { return end - begin; }
};

struct PromptLayout {
    TokenSeq tokens;
    std::optional<Span> memory_span;
    std::vector<Span> chunk_spans;  // content tokens only, markers excluded
    Span query_span;
    std::optional<Span> null_query_span;
    std::optional<Span> think_query_span;

    std::vector<int> query_rows() const {
        std::vector<int> rows;
        for (int t = query_span.begin; t < query_span.end; ++t) rows.push_back(t);
        return rows;
    }
};

struct AssembleOptions {
    bool with_null_query = false;
    bool with_think_query = false;
    // Calibration pass: the query block holds the null-query symbol instead
    // of Q; query_span and null_query_span then both cover it.
    bool substitute_null_query = false;
};

class PromptAssembler {
  public:
    PromptAssembler(Tokenizer tok, InstructionTemplate tmpl, int max_seq_len)
        : tok_(std::move(tok)), tmpl_(std::move(tmpl)), max_seq_len_(max_seq_len) {}

    const Tokenizer& tokenizer() const { return tok_; }
    const InstructionTemplate& instruction_template() const { return tmpl_; }

    PromptLayout assemble(const ListwiseInstance& inst,
                          const AssembleOptions& opts = {}) const {
        inst.validate();
        PromptLayout layout;
        auto& toks = layout.tokens;
        auto check_len = [&](const std::string& element) {
            if (static_cast<int>(toks.size()) > max_seq_len_)
                throw LengthError("instance " + inst.instance_id + ": prompt exceeds " +
                                  std::to_string(max_seq_len_) + " tokens at " +
                                  element);
        };
        auto append = [&](const TokenSeq& t) {
            toks.insert(toks.end(), t.begin(), t.end());
        };

        toks.push_back(tok_.bos());
        if (inst.memory_prefix) {
            append(tok_.encode(tmpl_.memory_header));
            TokenSeq mem = tok_.encode(*inst.memory_prefix);
            Span s{static_cast<int>(toks.size()),
                   static_cast<int>(toks.size() + mem.size())};
            append(mem);
            if (s.size() > 0) layout.memory_span = s;
            check_len("memory prefix");
        }
        append(tok_.encode(tmpl_.chunks_header));
        for (size_t k = 0; k < inst.candidates.size(); ++k) {
            toks.push_back(tok_.marker(static_cast<int>(k) + 1));
            TokenSeq ct = tok_.encode(inst.candidates[k].text);
            if (ct.empty())
                throw ArgumentError("instance " + inst.instance_id + ": candidate " +
                                    inst.candidates[k].id + " empty after tokenization");
            Span s{static_cast<int>(toks.size()),
                   static_cast<int>(toks.size() + ct.size())};
            append(ct);
            layout.chunk_spans.push_back(s);
            check_len("candidate " + inst.candidates[k].id);
        }
        append(tok_.encode(tmpl_.query_header));
        TokenSeq qt = opts.substitute_null_query
                          ? TokenSeq{tok_.null_query()}
                          : tok_.encode(inst.query);
        if (qt.empty())
            throw ArgumentError("instance " + inst.instance_id + ": empty query");
        layout.query_span = {static_cast<int>(toks.size()),
                             static_cast<int>(toks.size() + qt.size())};
        append(qt);
        if (opts.substitute_null_query) layout.null_query_span = layout.query_span;
        check_len("query");

        if (opts.with_null_query && !opts.substitute_null_query) {
            layout.null_query_span = {static_cast<int>(toks.size()),
                                      static_cast<int>(toks.size()) + 1};
            toks.push_back(tok_.null_query());
            check_len("null query");
        }
        if (opts.with_think_query) {
            TokenSeq q = tok_.encode(inst.query);
            Span s{static_cast<int>(toks.size()),
                   static_cast<int>(toks.size() + q.size()) + 2};
            toks.push_back(tok_.think_open());
            append(q);
            toks.push_back(tok_.think_close());
            layout.think_query_span = s;
            check_len("think query");
        }
        return layout;
    }

  private:
    Tokenizer tok_;
    InstructionTemplate tmpl_;
    int max_seq_len_;
};

}  // namespace attnrank
