#pragma once

#include <Eigen/Dense>
#include <compare>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "attnrank/common.hpp"

namespace attnrank {

using TokenId = int32_t;
using TokenSeq = std::vector<TokenId>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct ModelConfig {
    int n_layers = 4;
    int n_heads = 8;
    int d_model = 128;
    int d_head = 16;
    int d_ffn = 256;
    int vocab_size = 2048;
    int max_seq_len = 1024;
    std::optional<int> truncate_after_layer;
    float rope_theta = 10000.0f;

    void validate() const {
        if (n_layers <= 0 || n_heads <= 0 || d_model <= 0 || d_head <= 0 ||
            d_ffn <= 0 || vocab_size <= 0 || max_seq_len <= 0)
            throw ArgumentError("ModelConfig: all dimensions must be positive");
        if (d_model != n_heads * d_head)
            throw ArgumentError("ModelConfig: d_model must equal n_heads * d_head");
        if (truncate_after_layer &&
            (*truncate_after_layer < 0 || *truncate_after_layer >= n_layers))
            throw ArgumentError("ModelConfig: truncate_after_layer out of range");
    }
};

struct HeadId {
    int layer = 0;
    int head = 0;

    auto operator<=>(const HeadId&) const = default;

    // Appendix-style "l-h" notation, e.g. "20-15".
    std::string str() const {
        return std::to_string(layer) + "-" + std::to_string(head);
    }
    static HeadId parse(const std::string& s) {
        auto dash = s.find('-');
        if (dash == std::string::npos || dash == 0 || dash + 1 >= s.size())
            throw ParseError("HeadId: expected 'l-h', got '" + s + "'");
        try {
            return HeadId{std::stoi(s.substr(0, dash)), std::stoi(s.substr(dash + 1))};
        } catch (const std::exception&) {
            throw ParseError("HeadId: expected 'l-h', got '" + s + "'");
        }
    }
};

// Ordered head collection with optional per-head weights (gate variant).
struct HeadSet {
    std::vector<HeadId> heads;
    std::vector<double> weights;  // empty, or parallel to heads and positive

    void validate() const {
        for (size_t i = 0; i < heads.size(); ++i)
            for (size_t j = i + 1; j < heads.size(); ++j)
                if (heads[i] == heads[j])
                    throw ArgumentError("HeadSet: duplicate head " + heads[i].str());
        if (!weights.empty()) {
            if (weights.size() != heads.size())
                throw ArgumentError("HeadSet: weights length mismatch");
            for (double w : weights)
                if (!(w > 0)) throw ArgumentError("HeadSet: weights must be positive");
        }
    }

    double weight(size_t i) const { return weights.empty() ? 1.0 : weights[i]; }

    bool contains(HeadId id) const {
        for (const auto& h : heads)
            if (h == id) return true;
        return false;
    }

    int max_layer() const {
        int m = 0;
        for (const auto& h : heads) m = std::max(m, h.layer);
        return m;
    }
};

// Post-softmax attention rows for designated positions. Only the requested
// rows are materialized; each row spans the full prompt length.
template <typename Scalar>
struct AttentionCapture {
    std::map<HeadId, Matrix<Scalar>> entries;  // (captured_rows.size() x prompt_len)
    std::vector<int> captured_rows;            // ascending token positions
    int prompt_len = 0;

    const Matrix<Scalar>& rows_for(HeadId id) const {
        auto it = entries.find(id);
        if (it == entries.end())
            throw CaptureError("capture missing head " + id.str());
        return it->second;
    }

    // Index into the row dimension for an absolute token position.
    int row_index(int position) const {
        auto it = std::lower_bound(captured_rows.begin(), captured_rows.end(), position);
        if (it == captured_rows.end() || *it != position)
            throw CaptureError("capture missing row for position " +
                               std::to_string(position));
        return static_cast<int>(it - captured_rows.begin());
    }
};

}  // namespace attnrank
