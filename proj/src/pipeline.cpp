#include "vitlens/pipeline.hpp"

#include <cstdio>
#include <fstream>

#include "vitlens/error.hpp"

namespace vitlens {

LabelSet LabelSet::numeric(int num_classes) {
    LabelSet s;
    s.labels_.reserve(num_classes);
    for (int i = 0; i < num_classes; ++i) s.labels_.push_back(std::to_string(i));
    return s;
}

LabelSet LabelSet::load(const std::filesystem::path& path, int num_classes) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open label file " + path.string());
    LabelSet s;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        s.labels_.push_back(line);
    }
    if (static_cast<int>(s.labels_.size()) != num_classes) {
        throw Error(ErrorCode::InvalidConfig, "label file " + path.string() + " has " +
                                                  std::to_string(s.labels_.size()) + " lines, model has " +
                                                  std::to_string(num_classes) + " classes");
    }
    return s;
}

std::string LabelSet::label(int class_index) const {
    if (class_index >= 0 && static_cast<std::size_t>(class_index) < labels_.size()) return labels_[class_index];
    return std::to_string(class_index);
}

LoadedModel load_model(const std::filesystem::path& weights_path,
                       const std::optional<std::filesystem::path>& labels_path, int num_heads_override) {
    const TensorTable table = read_weight_file(weights_path);
    const ModelConfig config = infer_config(table, num_heads_override);
    LoadedModel m{bind_weights(table, config), LabelSet::numeric(config.num_classes), {}};
    if (labels_path && std::filesystem::exists(*labels_path)) {
        m.labels = LabelSet::load(*labels_path, config.num_classes);
    }
    return m;
}

std::string_view to_string(CaptureMode mode) noexcept {
    switch (mode) {
        case CaptureMode::None: return "none";
        case CaptureMode::Attention: return "attention";
        case CaptureMode::Full: return "full";
    }
    return "attention";
}

std::optional<CaptureMode> parse_capture_mode(std::string_view text) noexcept {
    if (text == "none") return CaptureMode::None;
    if (text == "attention") return CaptureMode::Attention;
    if (text == "full") return CaptureMode::Full;
    return std::nullopt;
}

PatchMatrix preprocess(std::span<const std::uint8_t> image_bytes, const ModelConfig& config,
                       const Normalization& norm, bool resize) {
    ImageBuffer img = center_crop_square(decode_image(image_bytes));
    if (resize) {
        img = resize_bilinear(img, config.image_side);
    }
    PatchMatrix patches = patchify(normalize(img, norm), config.patch_size);
    if (patches.grid_side != config.grid_side) {
        throw Error(ErrorCode::DimensionMismatch, "image side " + std::to_string(img.width) +
                                                      " does not match the model input side " +
                                                      std::to_string(config.image_side));
    }
    return patches;
}

std::string make_trace_id(std::span<const std::uint8_t> image_bytes, const InferOptions& options) {
    // 64-bit FNV-1a over the image and every option that shapes the trace
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint8_t b) {
        h ^= b;
        h *= 0x100000001b3ull;
    };
    for (auto b : image_bytes) mix(b);
    std::string opts = std::string(to_string(options.capture)) + "|" + std::to_string(options.top_k) + "|" +
                       (options.resize ? "r" : "n");
    for (int c : options.tracked_classes) opts += "," + std::to_string(c);
    for (char ch : opts) mix(static_cast<std::uint8_t>(ch));
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

InferenceResult run_inference(const LoadedModel& model, std::span<const std::uint8_t> image_bytes,
                              const InferOptions& options) {
    const auto& config = model.config();
    if (options.top_k < 1 || options.top_k > config.num_classes) {
        throw Error(ErrorCode::KOutOfRange, "topk=" + std::to_string(options.top_k) + " with " +
                                                std::to_string(config.num_classes) + " classes");
    }
    for (int c : options.tracked_classes) {
        if (c < 0 || c >= config.num_classes) {
            throw Error(ErrorCode::IndexOutOfRange, "tracked class " + std::to_string(c));
        }
    }
    const PatchMatrix patches = preprocess(image_bytes, config, model.normalization, options.resize);
    const CaptureFlags flags =
        options.capture == CaptureMode::Full ? CaptureFlags::full() : CaptureFlags::attention_only();
    auto trace = std::make_shared<InferenceTrace>(forward(patches, model.weights, flags));
    return {make_trace_id(image_bytes, options), std::move(trace)};
}

}  // namespace vitlens
