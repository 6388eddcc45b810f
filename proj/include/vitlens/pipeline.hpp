#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "vitlens/image.hpp"
#include "vitlens/model.hpp"
#include "vitlens/weights.hpp"

namespace vitlens {

/// Index → human-readable class name. Falls back to the decimal index when
/// no label file is available.
class LabelSet {
public:
    LabelSet() = default;
    static LabelSet numeric(int num_classes);
    /// One label per line, exactly `num_classes` lines.
    static LabelSet load(const std::filesystem::path& path, int num_classes);

    std::string label(int class_index) const;
    std::size_t size() const noexcept { return labels_.size(); }

private:
    std::vector<std::string> labels_;
};

/// Everything needed to serve requests for one model; immutable after load.
struct LoadedModel {
    WeightBundle weights;
    LabelSet labels;
    Normalization normalization;

    const ModelConfig& config() const noexcept { return weights.config; }
};

/// Reads a weight container, infers its config and binds it. Labels are
/// optional.
LoadedModel load_model(const std::filesystem::path& weights_path,
                       const std::optional<std::filesystem::path>& labels_path = std::nullopt,
                       int num_heads_override = 0);

enum class CaptureMode { None, Attention, Full };

std::string_view to_string(CaptureMode mode) noexcept;
std::optional<CaptureMode> parse_capture_mode(std::string_view text) noexcept;

struct InferOptions {
    CaptureMode capture = CaptureMode::Attention;
    int top_k = 5;
    std::set<int> tracked_classes;
    // When false the (center-cropped) upload must already be at the model's
    // input resolution.
    bool resize = true;
};

/// decode → center crop → resize → normalize → patchify.
PatchMatrix preprocess(std::span<const std::uint8_t> image_bytes, const ModelConfig& config,
                       const Normalization& norm, bool resize = true);

/// Content-derived identifier: the same image and options always map to
/// the same id.
std::string make_trace_id(std::span<const std::uint8_t> image_bytes, const InferOptions& options);

struct InferenceResult {
    std::string trace_id;
    std::shared_ptr<const InferenceTrace> trace;
};

InferenceResult run_inference(const LoadedModel& model, std::span<const std::uint8_t> image_bytes,
                              const InferOptions& options);

}  // namespace vitlens
