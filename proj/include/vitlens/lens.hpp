#pragma once

#include <optional>
#include <set>
#include <span>
#include <vector>

#include "vitlens/model.hpp"
#include "vitlens/tensor.hpp"
#include "vitlens/weights.hpp"

namespace vitlens {

/// Classification head applied to the CLS state at every depth; row ℓ uses
/// the same transform as the final classifier.
Matrix compute_logit_lens(const Matrix& cls_per_layer, const WeightBundle& w);

struct RankedClass {
    int class_index = 0;
    float logit = 0.0f;
    float probability = 0.0f;  // softmax over the full logit vector

    bool operator==(const RankedClass&) const = default;
};

/// k highest logits, descending; ties go to the lower class index.
std::vector<RankedClass> top_k(std::span<const float> logits, int k);

struct LensTrajectory {
    Matrix per_layer_logits;  // (L+1) × C
    Matrix per_layer_probabilities;
    std::vector<std::vector<RankedClass>> per_layer_topk;
    std::set<int> tracked_classes;
};

LensTrajectory build_trajectory(const InferenceTrace& trace, int k, const std::set<int>& tracked = {});

/// Either one head or the arithmetic mean over heads.
class HeadSelector {
public:
    static HeadSelector mean() { return HeadSelector(std::nullopt); }
    static HeadSelector head(int index) { return HeadSelector(index); }

    bool is_mean() const noexcept { return !index_.has_value(); }
    int index() const { return index_.value(); }

private:
    explicit HeadSelector(std::optional<int> index) : index_(index) {}
    std::optional<int> index_;
};

struct AttentionSlice {
    int layer = 0;
    HeadSelector head = HeadSelector::mean();
    int token = 0;                    // 0 is CLS
    std::vector<float> weights_to;    // row `token`
    std::vector<float> weights_from;  // column `token`
    Matrix patch_values;              // grid_side × grid_side view of weights_to[1..T)
};

AttentionSlice attention_slice(const InferenceTrace& trace, int layer, HeadSelector head, int token);

}  // namespace vitlens
