#include "vitlens/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "vitlens/error.hpp"
#include "vitlens/lens.hpp"

namespace vitlens {

namespace {

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
    if (m.rows() != rows || m.cols() != cols) {
        throw Error(ErrorCode::DimensionMismatch, std::string(what) + " is " + std::to_string(m.rows()) + "x" +
                                                      std::to_string(m.cols()) + ", expected " +
                                                      std::to_string(rows) + "x" + std::to_string(cols));
    }
}

}  // namespace

Matrix embed_tokens(const PatchMatrix& patches, const WeightBundle& w) {
    const auto& c = w.config;
    require_shape(patches.vectors, c.num_patches(), c.patch_dim(), "patch matrix");
    Matrix projected = add_bias(matmul(patches.vectors, w.patch_proj), w.patch_bias);
    const std::size_t d = c.hidden_dim;
    Matrix x(c.token_count(), d);
    std::copy(w.cls_token.begin(), w.cls_token.end(), x.row(0).begin());
    for (std::size_t n = 0; n < projected.rows(); ++n) {
        std::copy(projected.row(n).begin(), projected.row(n).end(), x.row(n + 1).begin());
    }
    return add_rows(x, w.pos_embed);
}

std::pair<Matrix, AttentionRecord> multi_head_attention(const Matrix& x, const LayerWeights& lw,
                                                        const ModelConfig& config, int layer,
                                                        CaptureFlags capture) {
    const std::size_t t = config.token_count(), d = config.hidden_dim, h = config.num_heads;
    const std::size_t dh = config.head_dim();
    require_shape(x, t, d, "attention input");

    const Matrix qkv = add_bias(matmul(x, lw.w_qkv), lw.b_qkv);
    const float scale_factor = 1.0f / std::sqrt(static_cast<float>(d) / static_cast<float>(h));

    AttentionRecord rec;
    rec.layer = layer;
    rec.weights.reserve(h);
    if (capture.scores) rec.scores.emplace();
    if (capture.qkv) rec.qkv.emplace();

    Matrix concat(t, d);
    for (std::size_t head = 0; head < h; ++head) {
        Matrix q = slice_cols(qkv, head * dh, dh);
        Matrix k = slice_cols(qkv, d + head * dh, dh);
        Matrix v = slice_cols(qkv, 2 * d + head * dh, dh);

        const Matrix raw = matmul(q, transpose(k));
        Matrix attn = softmax_rows(raw, scale_factor);
        const Matrix out = matmul(attn, v);
        for (std::size_t r = 0; r < t; ++r) {
            std::copy(out.row(r).begin(), out.row(r).end(), concat.row(r).begin() + head * dh);
        }
        if (capture.scores) rec.scores->push_back(scale(raw, scale_factor));
        if (capture.qkv) {
            rec.qkv->q.push_back(std::move(q));
            rec.qkv->k.push_back(std::move(k));
            rec.qkv->v.push_back(std::move(v));
        }
        rec.weights.push_back(std::move(attn));
    }
    Matrix projected = add_bias(matmul(concat, lw.w_out), lw.b_out);
    return {std::move(projected), std::move(rec)};
}

std::pair<Matrix, AttentionRecord> encoder_block(const Matrix& x, const WeightBundle& w, int layer,
                                                 CaptureFlags capture) {
    const auto& c = w.config;
    if (layer < 0 || layer >= c.num_layers) {
        throw Error(ErrorCode::IndexOutOfRange, "layer " + std::to_string(layer));
    }
    const LayerWeights& lw = w.layers[layer];
    auto [attn_out, record] =
        multi_head_attention(layer_norm_rows(x, lw.ln1_gamma, lw.ln1_beta, c.ln_eps), lw, c, layer, capture);
    Matrix u = add_rows(x, attn_out);

    Matrix hidden = add_bias(matmul(layer_norm_rows(u, lw.ln2_gamma, lw.ln2_beta, c.ln_eps), lw.w_mlp1), lw.b_mlp1);
    Matrix mlp_out = add_bias(matmul(gelu(hidden), lw.w_mlp2), lw.b_mlp2);
    return {add_rows(u, mlp_out), std::move(record)};
}

std::vector<float> apply_head(std::span<const float> cls, const WeightBundle& w) {
    if (cls.size() != static_cast<std::size_t>(w.config.hidden_dim)) {
        throw Error(ErrorCode::DimensionMismatch, "cls vector has " + std::to_string(cls.size()) +
                                                      " features, expected " + std::to_string(w.config.hidden_dim));
    }
    const std::size_t d = cls.size();
    Matrix z(1, d, layer_norm(cls, w.final_ln_gamma, w.final_ln_beta, w.config.ln_eps));
    Matrix logits = add_bias(matmul(z, w.head_w), w.head_b);
    return logits.values();
}

Classification classify(std::span<const float> cls, const WeightBundle& w) {
    Classification out;
    out.logits = apply_head(cls, w);
    out.probabilities = softmax(out.logits);
    return out;
}

Matrix run_blocks(const Matrix& x, const WeightBundle& w, CaptureFlags capture, InferenceTrace& trace) {
    const auto& c = w.config;
    trace.attention.clear();
    trace.attention.reserve(c.num_layers);
    trace.cls_per_layer = Matrix(c.num_layers + 1, c.hidden_dim);
    if (capture.hidden_states) trace.hidden_states.emplace().push_back(x);

    Matrix cur = x;
    std::copy(cur.row(0).begin(), cur.row(0).end(), trace.cls_per_layer.row(0).begin());
    for (int l = 0; l < c.num_layers; ++l) {
        auto [next, record] = encoder_block(cur, w, l, capture);
        cur = std::move(next);
        std::copy(cur.row(0).begin(), cur.row(0).end(), trace.cls_per_layer.row(l + 1).begin());
        if (capture.hidden_states) trace.hidden_states->push_back(cur);
        trace.attention.push_back(std::move(record));
    }
    return cur;
}

InferenceTrace forward(const PatchMatrix& patches, const WeightBundle& w, CaptureFlags capture) {
    const auto start = std::chrono::steady_clock::now();
    const auto& c = w.config;
    if (patches.grid_side != c.grid_side || patches.patch_size != c.patch_size) {
        throw Error(ErrorCode::DimensionMismatch,
                    "patch grid " + std::to_string(patches.grid_side) + "x" + std::to_string(patches.grid_side) +
                        " of " + std::to_string(patches.patch_size) + "px patches does not match the model's " +
                        std::to_string(c.grid_side) + "x" + std::to_string(c.grid_side) + " of " +
                        std::to_string(c.patch_size) + "px");
    }
    InferenceTrace trace;
    trace.config = c;
    trace.patch_grid = {patches.grid_side, patches.patch_size, patches.origins};
    trace.tokens_embedded = embed_tokens(patches, w);
    run_blocks(trace.tokens_embedded, w, capture, trace);

    trace.logit_lens = compute_logit_lens(trace.cls_per_layer, w);
    auto last = trace.logit_lens.row(c.num_layers);
    trace.final_logits.assign(last.begin(), last.end());
    trace.probabilities = softmax(trace.final_logits);
    trace.predicted_class = static_cast<int>(
        std::max_element(trace.probabilities.begin(), trace.probabilities.end()) - trace.probabilities.begin());
    trace.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return trace;
}

}  // namespace vitlens
