#pragma once

#include <cmath>
#include <vector>

#include "attnrank/common.hpp"

namespace attnrank {

struct LossResult {
    double loss = 0;
    std::vector<double> grad;  // d loss / d score, per candidate
};

// Group contrastive loss: every positive is an independent sub-sample
// competing against all negatives (and only negatives); terms are averaged
// over the positives. Computed in double with log-sum-exp stabilization.
inline LossResult group_contrastive_loss(const std::vector<double>& scores,
                                         const std::vector<bool>& labels) {
    if (scores.size() != labels.size())
        throw ArgumentError("group_contrastive_loss: scores/labels length mismatch");
    std::vector<int> pos, neg;
    for (size_t i = 0; i < labels.size(); ++i)
        (labels[i] ? pos : neg).push_back(static_cast<int>(i));
    if (pos.empty() || neg.empty())
        throw ArgumentError("group_contrastive_loss: degenerate instance (needs >= 1 "
                            "positive and >= 1 negative)");

    double neg_max = scores[neg[0]];
    for (int n : neg) neg_max = std::max(neg_max, scores[n]);
    double neg_sum = 0;
    for (int n : neg) neg_sum += std::exp(scores[n] - neg_max);
    double log_en = neg_max + std::log(neg_sum);  // log sum_neg e^{s_n}

    LossResult r;
    r.grad.assign(scores.size(), 0.0);
    const double inv_g = 1.0 / pos.size();
    for (int p : pos) {
        double sp = scores[p];
        // log(e^{sp} + E_n)
        double log_zp = std::max(sp, log_en) +
                        std::log1p(std::exp(-std::abs(sp - log_en)));
        r.loss += log_zp - sp;
        double sigma = std::exp(sp - log_zp);  // e^{sp} / (e^{sp} + E_n)
        r.grad[p] -= inv_g * (1.0 - sigma);
        for (int n : neg) r.grad[n] += inv_g * std::exp(scores[n] - log_zp);
    }
    r.loss *= inv_g;
    return r;
}

// Jacobian-transpose product of max-min normalization: given d loss / d
// normalized scores, produce d loss / d raw scores. Argmin/argmax follow the
// first occurrence; degenerate input (max == min) has zero gradient.
inline std::vector<double> max_min_norm_backward(const std::vector<double>& raw,
                                                 const std::vector<double>& d_norm,
                                                 double scale) {
    if (raw.size() != d_norm.size())
        throw ArgumentError("max_min_norm_backward: length mismatch");
    size_t im = 0, iM = 0;
    for (size_t i = 1; i < raw.size(); ++i) {
        if (raw[i] < raw[im]) im = i;
        if (raw[i] > raw[iM]) iM = i;
    }
    std::vector<double> out(raw.size(), 0.0);
    double range = raw[iM] - raw[im];
    if (range == 0) return out;
    double a = 0, b = 0;  // sum d_i, sum d_i * (s_i - min)
    for (size_t i = 0; i < raw.size(); ++i) {
        a += d_norm[i];
        b += d_norm[i] * (raw[i] - raw[im]);
        out[i] = scale / range * d_norm[i];
    }
    out[im] -= scale / range * a;
    out[im] += scale / (range * range) * b;
    out[iM] -= scale / (range * range) * b;
    return out;
}

}  // namespace attnrank
