#include "vitlens/lens.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "vitlens/error.hpp"

namespace vitlens {

Matrix compute_logit_lens(const Matrix& cls_per_layer, const WeightBundle& w) {
    const auto& c = w.config;
    if (cls_per_layer.rows() != static_cast<std::size_t>(c.num_layers + 1) ||
        cls_per_layer.cols() != static_cast<std::size_t>(c.hidden_dim)) {
        throw Error(ErrorCode::DimensionMismatch,
                    "cls_per_layer is " + std::to_string(cls_per_layer.rows()) + "x" +
                        std::to_string(cls_per_layer.cols()) + ", expected " + std::to_string(c.num_layers + 1) +
                        "x" + std::to_string(c.hidden_dim));
    }
    Matrix lens(cls_per_layer.rows(), c.num_classes);
    for (std::size_t l = 0; l < cls_per_layer.rows(); ++l) {
        const auto logits = apply_head(cls_per_layer.row(l), w);
        std::copy(logits.begin(), logits.end(), lens.row(l).begin());
    }
    return lens;
}

std::vector<RankedClass> top_k(std::span<const float> logits, int k) {
    if (k < 1 || static_cast<std::size_t>(k) > logits.size()) {
        throw Error(ErrorCode::KOutOfRange, "k=" + std::to_string(k) + " with " +
                                                std::to_string(logits.size()) + " classes");
    }
    const auto probs = softmax(logits);
    std::vector<int> order(logits.size());
    std::iota(order.begin(), order.end(), 0);
    auto before = [&](int a, int b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); };
    std::partial_sort(order.begin(), order.begin() + k, order.end(), before);
    std::vector<RankedClass> out;
    out.reserve(k);
    for (int i = 0; i < k; ++i) out.push_back({order[i], logits[order[i]], probs[order[i]]});
    return out;
}

LensTrajectory build_trajectory(const InferenceTrace& trace, int k, const std::set<int>& tracked) {
    const auto& lens = trace.logit_lens;
    for (int cls : tracked) {
        if (cls < 0 || cls >= static_cast<int>(lens.cols())) {
            throw Error(ErrorCode::IndexOutOfRange, "tracked class " + std::to_string(cls));
        }
    }
    LensTrajectory t;
    t.per_layer_logits = lens;
    t.per_layer_probabilities = Matrix(lens.rows(), lens.cols());
    t.tracked_classes = tracked;
    for (std::size_t l = 0; l < lens.rows(); ++l) {
        const auto p = softmax(lens.row(l));
        std::copy(p.begin(), p.end(), t.per_layer_probabilities.row(l).begin());
        t.per_layer_topk.push_back(top_k(lens.row(l), k));
    }
    return t;
}

AttentionSlice attention_slice(const InferenceTrace& trace, int layer, HeadSelector head, int token) {
    const auto& c = trace.config;
    const int tokens = c.token_count();
    if (layer < 0 || layer >= static_cast<int>(trace.attention.size())) {
        throw Error(ErrorCode::IndexOutOfRange, "layer " + std::to_string(layer) + " not in [0, " +
                                                    std::to_string(trace.attention.size()) + ")");
    }
    const auto& rec = trace.attention[layer];
    if (!head.is_mean() && (head.index() < 0 || head.index() >= rec.num_heads())) {
        throw Error(ErrorCode::IndexOutOfRange, "head " + std::to_string(head.index()) + " not in [0, " +
                                                    std::to_string(rec.num_heads()) + ")");
    }
    if (token < 0 || token >= tokens) {
        throw Error(ErrorCode::IndexOutOfRange,
                    "token " + std::to_string(token) + " not in [0, " + std::to_string(tokens) + ")");
    }

    AttentionSlice s;
    s.layer = layer;
    s.head = head;
    s.token = token;
    s.weights_to.assign(tokens, 0.0f);
    s.weights_from.assign(tokens, 0.0f);
    if (head.is_mean()) {
        std::vector<double> to(tokens, 0.0), from(tokens, 0.0);
        for (const auto& m : rec.weights) {
            for (int j = 0; j < tokens; ++j) {
                to[j] += m(token, j);
                from[j] += m(j, token);
            }
        }
        const double n = rec.num_heads();
        for (int j = 0; j < tokens; ++j) {
            s.weights_to[j] = static_cast<float>(to[j] / n);
            s.weights_from[j] = static_cast<float>(from[j] / n);
        }
    } else {
        const Matrix& m = rec.weights[head.index()];
        for (int j = 0; j < tokens; ++j) {
            s.weights_to[j] = m(token, j);
            s.weights_from[j] = m(j, token);
        }
    }
    s.patch_values = Matrix(c.grid_side, c.grid_side, std::vector<float>(s.weights_to.begin() + 1, s.weights_to.end()));
    return s;
}

}  // namespace vitlens
