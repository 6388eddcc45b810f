#include "vitlens/service.hpp"

#include <algorithm>
#include <charconv>
#include <iostream>
#include <sstream>

#include "httplib.h"
#include "vitlens/lens.hpp"
#include "vitlens/trace_json.hpp"

namespace vitlens {

namespace {

constexpr const char* kJson = "application/json";

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view message) {
    res.status = status;
    res.set_content(error_to_json(code, message), kJson);
}

void send_error(httplib::Response& res, const Error& e) {
    send_error(res, http_status_for(e.code()), to_string(e.code()), e.what());
}

std::optional<int> parse_int(std::string_view s) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

// Comma-separated class indices; nullopt on any bad entry.
std::optional<std::set<int>> parse_int_list(std::string_view s) {
    std::set<int> out;
    while (!s.empty()) {
        const auto comma = s.find(',');
        const auto item = s.substr(0, comma);
        auto v = parse_int(item);
        if (!v) return std::nullopt;
        out.insert(*v);
        if (comma == std::string_view::npos) break;
        s.remove_prefix(comma + 1);
    }
    return out;
}

}  // namespace

TraceCache::TraceCache(std::size_t capacity) : capacity_(std::max<std::size_t>(capacity, 1)) {}

void TraceCache::put(const std::string& id, std::shared_ptr<const InferenceTrace> trace) {
    std::lock_guard lock(mu_);
    if (auto it = index_.find(id); it != index_.end()) {
        it->second->second = std::move(trace);
        order_.splice(order_.begin(), order_, it->second);
        return;
    }
    order_.emplace_front(id, std::move(trace));
    index_[id] = order_.begin();
    while (order_.size() > capacity_) {
        index_.erase(order_.back().first);
        order_.pop_back();
    }
}

std::shared_ptr<const InferenceTrace> TraceCache::get(const std::string& id) {
    std::lock_guard lock(mu_);
    auto it = index_.find(id);
    if (it == index_.end()) return nullptr;
    order_.splice(order_.begin(), order_, it->second);
    return it->second->second;
}

std::size_t TraceCache::size() const {
    std::lock_guard lock(mu_);
    return order_.size();
}

void ServiceConfig::validate() const {
    if (max_upload_bytes < (1u << 20)) {
        throw Error(ErrorCode::InvalidConfig, "max_upload_bytes must be at least 1 MiB");
    }
    if (listen_port < 1 || listen_port > 65535) {
        throw Error(ErrorCode::InvalidConfig, "port " + std::to_string(listen_port) + " not in [1, 65535]");
    }
    if (topk_default < 1) throw Error(ErrorCode::InvalidConfig, "default top-k must be >= 1");
}

int http_status_for(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::UnsupportedFormat:
        case ErrorCode::CorruptImage:
        case ErrorCode::InvalidArgument:
            return 400;
        case ErrorCode::IndivisibleSide:
        case ErrorCode::DimensionMismatch:
        case ErrorCode::IndexOutOfRange:
        case ErrorCode::KOutOfRange:
            return 422;
        default:
            return 500;
    }
}

Service::Service(ServiceConfig config)
    : config_(std::move(config)), server_(std::make_unique<httplib::Server>()), cache_(config_.cache_capacity) {
    config_.validate();
    server_->set_payload_max_length(config_.max_upload_bytes);
    install_routes();
}

Service::~Service() { stop(); }

void Service::set_model(std::shared_ptr<const LoadedModel> model) {
    std::lock_guard lock(model_mu_);
    model_ = std::move(model);
    load_error_.clear();
}

std::shared_ptr<const LoadedModel> Service::model() const {
    std::lock_guard lock(model_mu_);
    return model_;
}

void Service::set_load_error(std::string message) {
    std::lock_guard lock(model_mu_);
    load_error_ = std::move(message);
}

bool Service::listen() { return server_->listen(config_.host, config_.listen_port); }

int Service::bind_to_any_port(const std::string& host) { return server_->bind_to_any_port(host); }

bool Service::listen_after_bind() { return server_->listen_after_bind(); }

void Service::wait_until_ready() const { server_->wait_until_ready(); }

void Service::stop() {
    if (server_) server_->stop();
}

void Service::install_routes() {
    auto& srv = *server_;

    srv.set_post_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
        if (!req.has_header("Origin")) return;
        const auto origin = req.get_header_value("Origin");
        const auto& allowed = config_.cors_allowed_origins;
        const bool any = std::find(allowed.begin(), allowed.end(), "*") != allowed.end();
        if (any || std::find(allowed.begin(), allowed.end(), origin) != allowed.end()) {
            res.set_header("Access-Control-Allow-Origin", any ? "*" : origin);
            res.set_header("Vary", "Origin");
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
        }
    });
    srv.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const Error& e) {
            send_error(res, e);
        } catch (const std::exception& e) {
            send_error(res, 500, "Internal", e.what());
        } catch (...) {
            send_error(res, 500, "Internal", "unknown exception");
        }
    });

    srv.Get("/api/v1/config", [this](const httplib::Request&, httplib::Response& res) {
        auto m = model();
        if (!m) {
            std::lock_guard lock(model_mu_);
            send_error(res, 503, "ModelUnavailable", load_error_.empty() ? "weights are still loading" : load_error_);
            return;
        }
        res.set_content(config_to_json(m->config()), kJson);
    });

    srv.Post("/api/v1/infer", [this](const httplib::Request& req, httplib::Response& res) {
        auto m = model();
        if (!m) {
            send_error(res, 503, "ModelUnavailable", "weights are not loaded");
            return;
        }
        InferOptions opts;
        opts.capture = config_.capture_default;
        opts.top_k = std::min(config_.topk_default, m->config().num_classes);
        if (req.has_param("capture")) {
            auto mode = parse_capture_mode(req.get_param_value("capture"));
            if (!mode) return send_error(res, 400, "InvalidArgument", "capture must be none, attention or full");
            opts.capture = *mode;
        }
        if (req.has_param("topk")) {
            auto k = parse_int(req.get_param_value("topk"));
            if (!k) return send_error(res, 400, "InvalidArgument", "topk must be an integer");
            opts.top_k = *k;
        }
        if (req.has_param("track")) {
            auto tracked = parse_int_list(req.get_param_value("track"));
            if (!tracked) return send_error(res, 400, "InvalidArgument", "track must be comma-separated class indices");
            opts.tracked_classes = std::move(*tracked);
        }
        if (req.has_param("resize")) {
            const auto v = req.get_param_value("resize");
            if (v != "0" && v != "1") return send_error(res, 400, "InvalidArgument", "resize must be 0 or 1");
            opts.resize = v == "1";
        }

        std::string_view image;
        if (req.is_multipart_form_data()) {
            if (!req.has_file("image")) {
                return send_error(res, 400, "UnsupportedFormat", "multipart field \"image\" is missing");
            }
            const auto& file = req.files.find("image")->second;
            image = file.content;
        } else {
            image = req.body;
        }
        if (image.empty()) return send_error(res, 400, "UnsupportedFormat", "empty image upload");

        const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(image.data()), image.size());
        InferenceResult result = run_inference(*m, bytes, opts);
        cache_.put(result.trace_id, result.trace);
        res.set_content(trace_to_json(*result.trace, result.trace_id, m->labels, opts), kJson);
    });

    srv.Get("/api/v1/attention", [this](const httplib::Request& req, httplib::Response& res) {
        for (const char* p : {"trace_id", "layer", "head", "token"}) {
            if (!req.has_param(p)) return send_error(res, 400, "InvalidArgument", std::string("missing parameter ") + p);
        }
        auto trace = cache_.get(req.get_param_value("trace_id"));
        if (!trace) return send_error(res, 404, "UnknownTrace", "trace_id is not in the cache");

        const auto layer = parse_int(req.get_param_value("layer"));
        const auto token = parse_int(req.get_param_value("token"));
        const auto head_text = req.get_param_value("head");
        std::optional<HeadSelector> head;
        if (head_text == "mean") {
            head = HeadSelector::mean();
        } else if (auto h = parse_int(head_text)) {
            head = HeadSelector::head(*h);
        }
        if (!layer || !token || !head) {
            return send_error(res, 400, "InvalidArgument", "layer and token must be integers, head an integer or \"mean\"");
        }
        res.set_content(slice_to_json(attention_slice(*trace, *layer, *head, *token)), kJson);
    });
}

}  // namespace vitlens
