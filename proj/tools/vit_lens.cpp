// vit-lens: run traced ViT inference, serve the HTTP API, or check a weight file.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <thread>

#include "CLI11.hpp"
#include "vitlens/error.hpp"
#include "vitlens/pipeline.hpp"
#include "vitlens/service.hpp"
#include "vitlens/trace_json.hpp"
#include "vitlens/weights.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitWeights = 3;
constexpr int kExitImage = 4;

bool is_image_error(vitlens::ErrorCode c) {
    using vitlens::ErrorCode;
    return c == ErrorCode::UnsupportedFormat || c == ErrorCode::CorruptImage || c == ErrorCode::IndivisibleSide ||
           c == ErrorCode::DimensionMismatch;
}

std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

int run_infer(const std::string& weights, const std::string& image_path, const std::string& labels,
              const std::string& capture, int top_k, const std::vector<int>& track, bool no_resize,
              bool omit_timing, int heads, const std::string& out_path) {
    vitlens::LoadedModel model;
    try {
        model = vitlens::load_model(weights, labels.empty() ? std::nullopt : std::optional<std::filesystem::path>(labels),
                                    heads);
    } catch (const vitlens::Error& e) {
        std::cerr << "weight error: " << e.what() << "\n";
        return kExitWeights;
    }

    std::ifstream in(image_path, std::ios::binary);
    if (!in) {
        std::cerr << "image error: cannot open " << image_path << "\n";
        return kExitImage;
    }
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    vitlens::InferOptions opts;
    opts.capture = *vitlens::parse_capture_mode(capture);
    opts.top_k = std::min(top_k, model.config().num_classes);
    opts.tracked_classes.insert(track.begin(), track.end());
    opts.resize = !no_resize;

    std::string doc;
    try {
        auto result = vitlens::run_inference(model, bytes, opts);
        doc = vitlens::trace_to_json(*result.trace, result.trace_id, model.labels, opts, {.include_timing = !omit_timing});
    } catch (const vitlens::Error& e) {
        std::cerr << (is_image_error(e.code()) ? "image error: " : "error: ") << e.what() << "\n";
        return is_image_error(e.code()) ? kExitImage : kExitUsage;
    }

    if (out_path.empty() || out_path == "-") {
        std::cout << doc << "\n";
    } else {
        std::ofstream out(out_path, std::ios::binary);
        out << doc;
        if (!out) {
            std::cerr << "cannot write " << out_path << "\n";
            return 1;
        }
    }
    return 0;
}

int run_validate(const std::string& weights, int heads) {
    vitlens::TensorTable table;
    vitlens::ModelConfig config;
    try {
        table = vitlens::read_weight_file(weights);
        config = vitlens::infer_config(table, heads);
    } catch (const vitlens::Error& e) {
        std::cerr << "weight error: " << e.what() << "\n";
        return kExitWeights;
    }
    std::cout << "config: layers=" << config.num_layers << " heads=" << config.num_heads
              << " hidden=" << config.hidden_dim << " patch=" << config.patch_size
              << " image=" << config.image_side << " grid=" << config.grid_side
              << " classes=" << config.num_classes << " mlp_ratio=" << config.mlp_ratio << "\n";
    for (const auto& [name, shape] : vitlens::expected_tensors(config)) {
        auto it = table.tensors.find(name);
        std::cout << "  " << name << " " << shape_str(shape) << " : "
                  << (it == table.tensors.end() ? std::string("(absent)") : shape_str(it->second.shape)) << "\n";
    }
    try {
        vitlens::bind_weights(table, config);
    } catch (const vitlens::Error& e) {
        std::cerr << "weight error: " << e.what() << "\n";
        return kExitWeights;
    }
    std::cout << "ok: " << table.tensors.size() << " tensors bound\n";
    return 0;
}

int run_serve(vitlens::ServiceConfig cfg, int heads) {
    if (const char* env = std::getenv("VIT_LENS_WEIGHTS"); env && *env) cfg.weight_path = env;
    if (const char* env = std::getenv("VIT_LENS_PORT"); env && *env) {
        try {
            cfg.listen_port = std::stoi(env);
        } catch (const std::exception&) {
            std::cerr << "VIT_LENS_PORT is not a port number: " << env << "\n";
            return kExitUsage;
        }
    }
    if (cfg.weight_path.empty()) {
        std::cerr << "--weights (or VIT_LENS_WEIGHTS) is required\n";
        return kExitUsage;
    }
    std::unique_ptr<vitlens::Service> service;
    try {
        service = std::make_unique<vitlens::Service>(cfg);
    } catch (const vitlens::Error& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
    }

    // The port answers 503 until the weights are bound.
    std::thread loader([&service, cfg, heads] {
        try {
            auto labels = cfg.labels_path ? std::optional<std::filesystem::path>(*cfg.labels_path) : std::nullopt;
            auto model = std::make_shared<const vitlens::LoadedModel>(vitlens::load_model(cfg.weight_path, labels, heads));
            service->set_model(std::move(model));
            std::cerr << "weights loaded from " << cfg.weight_path << "\n";
        } catch (const std::exception& e) {
            service->set_load_error(e.what());
            std::cerr << "weight error: " << e.what() << "\n";
        }
    });
    std::cerr << "listening on " << cfg.host << ":" << cfg.listen_port << "\n";
    const bool ok = service->listen();
    loader.join();
    if (!ok) {
        std::cerr << "cannot listen on " << cfg.host << ":" << cfg.listen_port << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Instrumented Vision Transformer inference"};
    app.require_subcommand(1);

    int heads = 0;

    auto* infer = app.add_subcommand("infer", "Run one traced forward pass and write the trace JSON");
    std::string weights, image, labels, capture = "attention", out;
    int top_k = 5;
    std::vector<int> track;
    bool no_resize = false, omit_timing = false;
    infer->add_option("--weights", weights, "Weight container (safetensors)")->required();
    infer->add_option("--image", image, "PNG or JPEG input")->required();
    infer->add_option("--labels", labels, "Class label file, one label per line");
    infer->add_option("--capture", capture, "none | attention | full")
        ->check(CLI::IsMember({"none", "attention", "full"}));
    infer->add_option("--top-k", top_k, "Number of ranked classes")->check(CLI::PositiveNumber);
    infer->add_option("--track", track, "Extra class indices to keep in the logit lens");
    infer->add_flag("--no-resize", no_resize, "Require the image to already be at the model resolution");
    infer->add_flag("--omit-timing", omit_timing, "Leave elapsed_ms out so output is byte-reproducible");
    infer->add_option("--heads", heads, "Head count when the weight file has no num_heads metadata");
    infer->add_option("--out", out, "Output path (default stdout)");

    auto* serve = app.add_subcommand("serve", "Run the HTTP API");
    vitlens::ServiceConfig svc;
    std::string serve_labels;
    std::size_t max_upload_mib = 8;
    serve->add_option("--weights", svc.weight_path, "Weight container (safetensors); VIT_LENS_WEIGHTS overrides");
    serve->add_option("--port", svc.listen_port, "TCP port; VIT_LENS_PORT overrides");
    serve->add_option("--host", svc.host, "Bind address");
    serve->add_option("--labels", serve_labels, "Class label file");
    serve->add_option("--max-upload-mib", max_upload_mib, "Upload limit in MiB (>= 1)");
    serve->add_option("--cors-origin", svc.cors_allowed_origins, "Allowed CORS origin (repeatable, * for any)");
    serve->add_option("--cache-size", svc.cache_capacity, "Number of traces kept for slice queries");
    serve->add_option("--heads", heads, "Head count when the weight file has no num_heads metadata");

    auto* validate = app.add_subcommand("validate-weights", "Print a shape report and check a weight file binds");
    std::string validate_weights;
    validate->add_option("--weights", validate_weights, "Weight container (safetensors)")->required();
    validate->add_option("--heads", heads, "Head count when the weight file has no num_heads metadata");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    if (*infer) {
        return run_infer(weights, image, labels, capture, top_k, track, no_resize, omit_timing, heads, out);
    }
    if (*validate) return run_validate(validate_weights, heads);
    if (!serve_labels.empty()) svc.labels_path = serve_labels;
    svc.max_upload_bytes = max_upload_mib << 20;
    return run_serve(std::move(svc), heads);
}
