#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "vitlens/image.hpp"
#include "vitlens/tensor.hpp"
#include "vitlens/weights.hpp"

namespace vitlens {

/// Which optional intermediates a forward pass records. Post-softmax
/// attention is always kept.
struct CaptureFlags {
    bool scores = false;         // pre-softmax scaled QKᵀ
    bool qkv = false;            // per-head Q, K, V
    bool hidden_states = false;  // token matrix after embedding and every block

    static CaptureFlags attention_only() { return {}; }
    static CaptureFlags full() { return {true, true, true}; }
};

struct QkvTensors {
    std::vector<Matrix> q, k, v;  // H entries of T × d_h
};

struct AttentionRecord {
    int layer = 0;
    std::vector<Matrix> weights;                // H entries of T × T, rows sum to 1
    std::optional<std::vector<Matrix>> scores;  // H entries of T × T
    std::optional<QkvTensors> qkv;

    int num_heads() const noexcept { return static_cast<int>(weights.size()); }
};

struct PatchGrid {
    int grid_side = 0;
    int patch_size = 0;
    std::vector<PatchOrigin> origins;
};

/// Everything recorded by one forward pass.
struct InferenceTrace {
    ModelConfig config;
    PatchGrid patch_grid;
    Matrix tokens_embedded;              // T × D
    std::vector<AttentionRecord> attention;  // one per layer
    Matrix cls_per_layer;                // (L+1) × D; row 0 is the embedded CLS
    std::vector<float> final_logits;
    std::vector<float> probabilities;
    Matrix logit_lens;  // (L+1) × C; last row is final_logits
    int predicted_class = 0;
    double elapsed_ms = 0.0;
    std::optional<std::vector<Matrix>> hidden_states;  // L+1 entries of T × D
};

/// X = [cls; patches·W + b] + pos_embed, CLS at row 0.
Matrix embed_tokens(const PatchMatrix& patches, const WeightBundle& w);

/// Multi-head self-attention with explicit Q/K/V; returns the projected
/// output and the layer's attention record.
std::pair<Matrix, AttentionRecord> multi_head_attention(const Matrix& x, const LayerWeights& lw,
                                                        const ModelConfig& config, int layer,
                                                        CaptureFlags capture = {});

/// Pre-LN block: u = x + MHA(LN1(x)); y = u + MLP(LN2(u)).
std::pair<Matrix, AttentionRecord> encoder_block(const Matrix& x, const WeightBundle& w, int layer,
                                                 CaptureFlags capture = {});

/// LN_final(cls)·head_w + head_b. Shared by classification and the logit lens.
std::vector<float> apply_head(std::span<const float> cls, const WeightBundle& w);

struct Classification {
    std::vector<float> logits;
    std::vector<float> probabilities;
};

Classification classify(std::span<const float> cls, const WeightBundle& w);

/// Runs every encoder block starting from an already-embedded token matrix.
/// `cls_per_layer` and per-block outputs are filled into `trace`.
Matrix run_blocks(const Matrix& x, const WeightBundle& w, CaptureFlags capture, InferenceTrace& trace);

/// Full traced forward pass. Deterministic: identical inputs give
/// bit-identical traces.
InferenceTrace forward(const PatchMatrix& patches, const WeightBundle& w, CaptureFlags capture = {});

}  // namespace vitlens
