#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vitlens/tensor.hpp"

namespace vitlens {

/// Architectural hyperparameters of a ViT classifier.
struct ModelConfig {
    int num_layers = 0;
    int num_heads = 0;
    int hidden_dim = 0;
    int patch_size = 0;
    int image_side = 0;
    int grid_side = 0;
    int num_classes = 0;
    int mlp_ratio = 4;
    float ln_eps = 1e-6f;

    int token_count() const noexcept { return grid_side * grid_side + 1; }
    int num_patches() const noexcept { return grid_side * grid_side; }
    int head_dim() const noexcept { return num_heads > 0 ? hidden_dim / num_heads : 0; }
    int patch_dim() const noexcept { return 3 * patch_size * patch_size; }
    int mlp_dim() const noexcept { return mlp_ratio * hidden_dim; }

    /// Throws InvalidConfig when an invariant (D mod H, image = grid × patch, ...) fails.
    void validate() const;

    /// FlexiViT-Large on a 3×3 grid of 32-pixel patches (96×96 input, ImageNet-1k head).
    static ModelConfig flexivit_large_3x3();

    bool operator==(const ModelConfig&) const = default;
};

enum class Dtype { F32, F16 };

struct RawTensor {
    Dtype source_dtype = Dtype::F32;
    std::vector<std::size_t> shape;
    std::vector<float> values;  // widened to float32

    std::size_t element_count() const noexcept;
};

/// Named tensors plus the container's string metadata.
struct TensorTable {
    std::map<std::string, RawTensor, std::less<>> tensors;
    std::map<std::string, std::string, std::less<>> metadata;
};

/// Decodes a safetensors container. Offsets are validated against the data
/// buffer before any tensor bytes are read.
TensorTable parse_weight_file(std::span<const std::uint8_t> bytes);
TensorTable read_weight_file(const std::filesystem::path& path);

/// Inverse of parse_weight_file; tensors are written as F32.
std::vector<std::uint8_t> serialize_weight_file(const TensorTable& table);

struct LayerWeights {
    std::vector<float> ln1_gamma, ln1_beta;
    Matrix w_qkv;  // D × 3D, columns ordered Q | K | V
    std::vector<float> b_qkv;
    Matrix w_out;
    std::vector<float> b_out;
    std::vector<float> ln2_gamma, ln2_beta;
    Matrix w_mlp1;  // D × (mlp_ratio·D)
    std::vector<float> b_mlp1;
    Matrix w_mlp2;
    std::vector<float> b_mlp2;
};

/// Validated parameters of one model. Immutable once bound; shared
/// read-only by every inference.
struct WeightBundle {
    ModelConfig config;
    Matrix patch_proj;  // 3P² × D
    std::vector<float> patch_bias;
    Matrix pos_embed;  // T × D
    std::vector<float> cls_token;
    std::vector<LayerWeights> layers;
    std::vector<float> final_ln_gamma, final_ln_beta;
    Matrix head_w;  // D × C
    std::vector<float> head_b;
};

/// Fills every bundle slot from the canonical names, checking shapes and
/// finiteness. Separate blocks.{l}.attn.{q,k,v} tensors are fused in Q,K,V
/// order when the fused qkv tensor is absent.
WeightBundle bind_weights(const TensorTable& table, const ModelConfig& config);

/// Recovers the config from tensor shapes. The head count is not visible in
/// any shape, so it comes from metadata "num_heads" (or `num_heads_override`).
ModelConfig infer_config(const TensorTable& table, int num_heads_override = 0);

/// Canonical-name table for a bundle (used for re-serialization).
TensorTable to_table(const WeightBundle& bundle);

/// Canonical name list in binding order, for shape reports.
std::vector<std::pair<std::string, std::vector<std::size_t>>> expected_tensors(const ModelConfig& config);

/// Seeded random parameters at the given config, for benchmarks and shape tests.
WeightBundle random_weights(const ModelConfig& config, std::uint64_t seed, float stddev = 0.02f);

}  // namespace vitlens
