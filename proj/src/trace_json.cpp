#include "vitlens/trace_json.hpp"

#include <cmath>
#include <map>

#include "json.hpp"

namespace vitlens {

namespace {

// float-typed json so values print with the shortest round-trip float32
// representation instead of a widened double
using OutJson = nlohmann::basic_json<std::map, std::vector, std::string, bool, std::int64_t, std::uint64_t, float>;

OutJson to_json(std::span<const float> v) {
    OutJson a = OutJson::array();
    for (float x : v) a.push_back(x);
    return a;
}

OutJson to_json(const Matrix& m) {
    OutJson a = OutJson::array();
    for (std::size_t r = 0; r < m.rows(); ++r) a.push_back(to_json(m.row(r)));
    return a;
}

OutJson to_json(const std::vector<Matrix>& ms) {
    OutJson a = OutJson::array();
    for (const auto& m : ms) a.push_back(to_json(m));
    return a;
}

OutJson columns(const Matrix& m, const std::vector<int>& cols) {
    OutJson a = OutJson::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        OutJson row = OutJson::array();
        for (int c : cols) row.push_back(m(r, c));
        a.push_back(std::move(row));
    }
    return a;
}

}  // namespace

std::string trace_to_json(const InferenceTrace& trace, const std::string& trace_id, const LabelSet& labels,
                          const InferOptions& options, TraceJsonOptions json_options) {
    const auto& c = trace.config;
    const auto ranked = top_k(trace.final_logits, options.top_k);

    OutJson doc;
    doc["trace_id"] = trace_id;
    doc["capture"] = std::string(to_string(options.capture));
    doc["predicted_class"] = trace.predicted_class;
    doc["class_label"] = labels.label(trace.predicted_class);

    OutJson topk = OutJson::array();
    OutJson probs_topk = OutJson::array();
    for (const auto& r : ranked) {
        topk.push_back({{"class_index", r.class_index},
                        {"label", labels.label(r.class_index)},
                        {"logit", r.logit},
                        {"probability", r.probability}});
        probs_topk.push_back(r.probability);
    }
    doc["topk"] = std::move(topk);
    doc["probabilities_topk"] = std::move(probs_topk);

    if (options.capture != CaptureMode::None) {
        OutJson attention = OutJson::array();
        for (const auto& rec : trace.attention) attention.push_back(to_json(rec.weights));
        doc["attention"] = std::move(attention);
    }

    std::vector<int> lens_classes;
    if (options.capture == CaptureMode::Full) {
        for (int i = 0; i < c.num_classes; ++i) lens_classes.push_back(i);
    } else {
        std::set<int> u = options.tracked_classes;
        for (const auto& r : ranked) u.insert(r.class_index);
        lens_classes.assign(u.begin(), u.end());
    }
    doc["logit_lens_classes"] = lens_classes;
    doc["logit_lens"] = columns(trace.logit_lens, lens_classes);

    OutJson norms = OutJson::array();
    for (std::size_t l = 0; l < trace.cls_per_layer.rows(); ++l) {
        double s = 0.0;
        for (float v : trace.cls_per_layer.row(l)) s += static_cast<double>(v) * v;
        norms.push_back(static_cast<float>(std::sqrt(s)));
    }
    doc["cls_norms"] = std::move(norms);
    doc["patch_grid"] = {{"grid_side", trace.patch_grid.grid_side}, {"patch_size", trace.patch_grid.patch_size}};

    if (options.capture == CaptureMode::Full) {
        doc["final_logits"] = to_json(trace.final_logits);
        doc["probabilities"] = to_json(trace.probabilities);
        doc["tokens_embedded"] = to_json(trace.tokens_embedded);
        doc["cls_per_layer"] = to_json(trace.cls_per_layer);
        OutJson scores = OutJson::array(), q = OutJson::array(), k = OutJson::array(), v = OutJson::array();
        for (const auto& rec : trace.attention) {
            if (rec.scores) scores.push_back(to_json(*rec.scores));
            if (rec.qkv) {
                q.push_back(to_json(rec.qkv->q));
                k.push_back(to_json(rec.qkv->k));
                v.push_back(to_json(rec.qkv->v));
            }
        }
        doc["scores"] = std::move(scores);
        doc["qkv"] = {{"q", std::move(q)}, {"k", std::move(k)}, {"v", std::move(v)}};
        if (trace.hidden_states) doc["hidden_states"] = to_json(*trace.hidden_states);
    }

    if (json_options.include_timing) doc["elapsed_ms"] = static_cast<float>(trace.elapsed_ms);
    return doc.dump(-1, ' ', false, OutJson::error_handler_t::replace);
}

std::string config_to_json(const ModelConfig& c) {
    OutJson doc = {{"num_layers", c.num_layers}, {"num_heads", c.num_heads},   {"hidden_dim", c.hidden_dim},
                   {"patch_size", c.patch_size}, {"image_side", c.image_side}, {"grid_side", c.grid_side},
                   {"num_classes", c.num_classes}, {"token_count", c.token_count()}};
    return doc.dump();
}

std::string slice_to_json(const AttentionSlice& s) {
    OutJson doc;
    doc["layer"] = s.layer;
    if (s.head.is_mean()) {
        doc["head"] = "mean";
    } else {
        doc["head"] = s.head.index();
    }
    doc["token"] = s.token;
    doc["weights_to"] = to_json(s.weights_to);
    doc["weights_from"] = to_json(s.weights_from);
    doc["patch_values"] = to_json(s.patch_values);
    return doc.dump();
}

std::string error_to_json(std::string_view code, std::string_view message) {
    OutJson doc = {{"error", {{"code", std::string(code)}, {"message", std::string(message)}}}};
    return doc.dump(-1, ' ', false, OutJson::error_handler_t::replace);
}

}  // namespace vitlens
