#pragma once

#include <string>

#include "vitlens/lens.hpp"
#include "vitlens/model.hpp"
#include "vitlens/pipeline.hpp"
#include "vitlens/weights.hpp"

namespace vitlens {

struct TraceJsonOptions {
    // elapsed_ms is the only wall-clock field; leaving it out makes the
    // document a pure function of (weights, image, options).
    bool include_timing = true;
};

/// The /api/v1/infer response body. The CLI writes the same document.
std::string trace_to_json(const InferenceTrace& trace, const std::string& trace_id, const LabelSet& labels,
                          const InferOptions& options, TraceJsonOptions json_options = {});

std::string config_to_json(const ModelConfig& config);

std::string slice_to_json(const AttentionSlice& slice);

std::string error_to_json(std::string_view code, std::string_view message);

}  // namespace vitlens
