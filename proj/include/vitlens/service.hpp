#pragma once

#include <cstddef>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vitlens/error.hpp"
#include "vitlens/model.hpp"
#include "vitlens/pipeline.hpp"

namespace httplib {
class Server;
}

namespace vitlens {

/// Bounded LRU of recent traces keyed by trace id. Safe for concurrent use;
/// an evicted id is simply absent.
class TraceCache {
public:
    explicit TraceCache(std::size_t capacity = 32);

    void put(const std::string& id, std::shared_ptr<const InferenceTrace> trace);
    std::shared_ptr<const InferenceTrace> get(const std::string& id);
    std::size_t size() const;
    std::size_t capacity() const noexcept { return capacity_; }

private:
    using Entry = std::pair<std::string, std::shared_ptr<const InferenceTrace>>;
    std::size_t capacity_;
    mutable std::mutex mu_;
    std::list<Entry> order_;  // front = most recent
    std::unordered_map<std::string, std::list<Entry>::iterator> index_;
};

struct ServiceConfig {
    std::string weight_path;
    std::optional<std::string> labels_path;
    std::string host = "0.0.0.0";
    int listen_port = 8080;
    std::size_t max_upload_bytes = 8u << 20;
    CaptureMode capture_default = CaptureMode::Attention;
    int topk_default = 5;
    std::vector<std::string> cors_allowed_origins;
    std::size_t cache_capacity = 32;

    /// max_upload_bytes >= 1 MiB, port in [1, 65535].
    void validate() const;
};

/// HTTP status for a library error code.
int http_status_for(ErrorCode code) noexcept;

/// The /api/v1 HTTP front end. Routes are installed at construction; the
/// model can be attached later (requests get 503 until then).
class Service {
public:
    explicit Service(ServiceConfig config);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    void set_model(std::shared_ptr<const LoadedModel> model);
    std::shared_ptr<const LoadedModel> model() const;

    /// Records a load failure; /config keeps answering 503 with this message.
    void set_load_error(std::string message);

    /// Blocks until stop(). Returns false if the port could not be bound.
    bool listen();
    /// Binds an ephemeral port on `host` and returns it (or -1); call
    /// listen_after_bind() to serve.
    int bind_to_any_port(const std::string& host = "127.0.0.1");
    bool listen_after_bind();
    void wait_until_ready() const;
    void stop();

    TraceCache& cache() noexcept { return cache_; }
    const ServiceConfig& config() const noexcept { return config_; }

private:
    void install_routes();

    ServiceConfig config_;
    std::unique_ptr<httplib::Server> server_;
    TraceCache cache_;
    mutable std::mutex model_mu_;
    std::shared_ptr<const LoadedModel> model_;
    std::string load_error_;
};

}  // namespace vitlens
