#include "vitlens/weights.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "vitlens/error.hpp"

namespace vitlens {

namespace {

using json = nlohmann::json;

constexpr std::string_view kMetadataKey = "__metadata__";

std::string shape_str(std::span<const std::size_t> shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::uint64_t read_u64_le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    std::uint32_t exp = (h >> 10) & 0x1fu;
    std::uint32_t mant = h & 0x3ffu;
    std::uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            // subnormal: renormalize
            exp = 127 - 15 + 1;
            while ((mant & 0x400u) == 0) {
                mant <<= 1;
                --exp;
            }
            mant &= 0x3ffu;
            bits = sign | (exp << 23) | (mant << 13);
        }
    } else if (exp == 0x1f) {
        bits = sign | 0x7f800000u | (mant << 13);
    } else {
        bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

json parse_header(std::string_view text) {
    std::set<std::string> seen;
    json::parser_callback_t cb = [&seen](int depth, json::parse_event_t event, json& parsed) {
        if (depth == 1 && event == json::parse_event_t::key) {
            const auto& name = parsed.get_ref<const std::string&>();
            if (!seen.insert(name).second) {
                throw Error(ErrorCode::DuplicateName, "tensor '" + name + "' appears more than once");
            }
        }
        return true;
    };
    try {
        return json::parse(text.begin(), text.end(), cb);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedHeader, std::string("header is not valid JSON: ") + e.what());
    }
}

std::uint64_t json_uint(const json& j, const std::string& what) {
    if (!j.is_number_unsigned()) {
        throw Error(ErrorCode::MalformedHeader, what + " must be a non-negative integer");
    }
    return j.get<std::uint64_t>();
}

// Shapes match when they agree after dropping leading singleton dims
// (checkpoints often store cls_token as [1,1,D] and pos_embed as [1,T,D]).
bool shape_matches(std::span<const std::size_t> got, std::span<const std::size_t> want) {
    while (got.size() > want.size() && got.front() == 1) got = got.subspan(1);
    return std::equal(got.begin(), got.end(), want.begin(), want.end());
}

const RawTensor& fetch(const TensorTable& table, const std::string& name,
                       std::vector<std::size_t> shape) {
    auto it = table.tensors.find(name);
    if (it == table.tensors.end()) throw Error(ErrorCode::MissingTensor, name);
    const RawTensor& t = it->second;
    if (!shape_matches(t.shape, shape)) {
        throw Error(ErrorCode::ShapeMismatch,
                    name + " expected " + shape_str(shape) + " got " + shape_str(t.shape));
    }
    for (float v : t.values) {
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteWeight, name);
    }
    return t;
}

std::vector<float> vec(const TensorTable& table, const std::string& name, std::size_t n) {
    return fetch(table, name, {n}).values;
}

Matrix mat(const TensorTable& table, const std::string& name, std::size_t r, std::size_t c) {
    return Matrix(r, c, fetch(table, name, {r, c}).values);
}

std::string block_name(int layer, std::string_view leaf) {
    return "blocks." + std::to_string(layer) + "." + std::string(leaf);
}

Matrix fused_qkv_weight(const TensorTable& table, int layer, std::size_t d) {
    const auto fused = block_name(layer, "attn.qkv.weight");
    if (table.tensors.count(fused) || !table.tensors.count(block_name(layer, "attn.q.weight"))) {
        return mat(table, fused, d, 3 * d);
    }
    Matrix out(d, 3 * d);
    const char* parts[] = {"attn.q.weight", "attn.k.weight", "attn.v.weight"};
    for (std::size_t p = 0; p < 3; ++p) {
        Matrix part = mat(table, block_name(layer, parts[p]), d, d);
        for (std::size_t r = 0; r < d; ++r) {
            std::copy(part.row(r).begin(), part.row(r).end(), out.row(r).begin() + p * d);
        }
    }
    return out;
}

std::vector<float> fused_qkv_bias(const TensorTable& table, int layer, std::size_t d) {
    const auto fused = block_name(layer, "attn.qkv.bias");
    if (table.tensors.count(fused) || !table.tensors.count(block_name(layer, "attn.q.bias"))) {
        return vec(table, fused, 3 * d);
    }
    std::vector<float> out;
    out.reserve(3 * d);
    for (const char* part : {"attn.q.bias", "attn.k.bias", "attn.v.bias"}) {
        auto v = vec(table, block_name(layer, part), d);
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

int exact_sqrt(std::size_t n) {
    auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    return r * r == n ? static_cast<int>(r) : -1;
}

}  // namespace

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
    if (num_layers < 1) fail("num_layers must be >= 1");
    if (num_heads < 1) fail("num_heads must be >= 1");
    if (hidden_dim < 1) fail("hidden_dim must be >= 1");
    if (hidden_dim % num_heads != 0) {
        fail("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by num_heads " +
             std::to_string(num_heads));
    }
    if (patch_size < 1 || grid_side < 1) fail("patch_size and grid_side must be >= 1");
    if (image_side != grid_side * patch_size) {
        fail("image_side " + std::to_string(image_side) + " != grid_side*patch_size " +
             std::to_string(grid_side * patch_size));
    }
    if (num_classes < 1) fail("num_classes must be >= 1");
    if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
    if (!(ln_eps > 0.0f)) fail("ln_eps must be positive");
}

ModelConfig ModelConfig::flexivit_large_3x3() {
    ModelConfig c;
    c.num_layers = 24;
    c.num_heads = 16;
    c.hidden_dim = 1024;
    c.patch_size = 32;
    c.grid_side = 3;
    c.image_side = 96;
    c.num_classes = 1000;
    c.mlp_ratio = 4;
    c.ln_eps = 1e-6f;
    return c;
}

std::size_t RawTensor::element_count() const noexcept {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

TensorTable parse_weight_file(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8) {
        throw Error(ErrorCode::MalformedHeader, "file shorter than the 8-byte header length");
    }
    const std::uint64_t header_len = read_u64_le(bytes.data());
    if (header_len > bytes.size() - 8) {
        throw Error(ErrorCode::MalformedHeader, "header length " + std::to_string(header_len) +
                                                    " exceeds file size " + std::to_string(bytes.size()));
    }
    const std::string_view text(reinterpret_cast<const char*>(bytes.data() + 8), header_len);
    const json header = parse_header(text);
    if (!header.is_object()) throw Error(ErrorCode::MalformedHeader, "header must be a JSON object");

    const auto buffer = bytes.subspan(8 + header_len);
    TensorTable table;

    // validate everything first, then copy
    struct Pending {
        std::string name;
        RawTensor meta;
        std::uint64_t begin;
    };
    std::vector<Pending> pending;
    for (const auto& [name, entry] : header.items()) {
        if (name == kMetadataKey) {
            if (!entry.is_object()) throw Error(ErrorCode::MalformedHeader, "__metadata__ must be an object");
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string()) throw Error(ErrorCode::MalformedHeader, "metadata value for '" + k + "' is not a string");
                table.metadata.emplace(k, v.get<std::string>());
            }
            continue;
        }
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets")) {
            throw Error(ErrorCode::MalformedHeader, "entry '" + name + "' needs dtype, shape, data_offsets");
        }
        const json& dt = entry["dtype"];
        if (!dt.is_string()) throw Error(ErrorCode::MalformedHeader, "dtype of '" + name + "' is not a string");
        RawTensor meta;
        const auto dts = dt.get<std::string>();
        if (dts == "F32") {
            meta.source_dtype = Dtype::F32;
        } else if (dts == "F16") {
            meta.source_dtype = Dtype::F16;
        } else {
            throw Error(ErrorCode::UnsupportedDtype, name + " has dtype " + dts);
        }
        const json& shape = entry["shape"];
        if (!shape.is_array()) throw Error(ErrorCode::MalformedHeader, "shape of '" + name + "' is not an array");
        std::uint64_t count = 1;
        for (const auto& d : shape) {
            const auto dim = json_uint(d, "shape of '" + name + "'");
            if (dim != 0 && count > bytes.size() / dim) {
                throw Error(ErrorCode::MalformedHeader, "shape of '" + name + "' exceeds the file size");
            }
            count *= dim;
            meta.shape.push_back(dim);
        }
        const json& offs = entry["data_offsets"];
        if (!offs.is_array() || offs.size() != 2) {
            throw Error(ErrorCode::MalformedHeader, "data_offsets of '" + name + "' must be [begin,end]");
        }
        const auto begin = json_uint(offs[0], "data_offsets of '" + name + "'");
        const auto end = json_uint(offs[1], "data_offsets of '" + name + "'");
        if (begin > end || end > buffer.size()) {
            throw Error(ErrorCode::OffsetOutOfBounds, name + " spans [" + std::to_string(begin) + "," +
                                                          std::to_string(end) + ") of a " +
                                                          std::to_string(buffer.size()) + "-byte buffer");
        }
        const std::size_t elem = meta.source_dtype == Dtype::F32 ? 4 : 2;
        if (end - begin != meta.element_count() * elem) {
            throw Error(ErrorCode::MalformedHeader, name + " byte range does not match shape " +
                                                        shape_str(meta.shape));
        }
        pending.push_back({name, std::move(meta), begin});
    }

    for (auto& p : pending) {
        const std::size_t n = p.meta.element_count();
        p.meta.values.resize(n);
        const std::uint8_t* src = buffer.data() + p.begin;
        if (p.meta.source_dtype == Dtype::F32) {
            for (std::size_t i = 0; i < n; ++i) {
                const std::uint8_t* b = src + 4 * i;
                const std::uint32_t bits = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
                                           std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
                p.meta.values[i] = std::bit_cast<float>(bits);
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                const std::uint8_t* b = src + 2 * i;
                p.meta.values[i] = half_to_float(static_cast<std::uint16_t>(b[0] | b[1] << 8));
            }
        }
        table.tensors.emplace(std::move(p.name), std::move(p.meta));
    }
    return table;
}

TensorTable read_weight_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_weight_file(bytes);
}

std::vector<std::uint8_t> serialize_weight_file(const TensorTable& table) {
    json header = json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : table.tensors) {
        const std::uint64_t len = t.values.size() * 4;
        header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + len}}};
        offset += len;
    }
    if (!table.metadata.empty()) header[std::string(kMetadataKey)] = table.metadata;
    std::string text = header.dump();
    text.append((8 - text.size() % 8) % 8, ' ');

    std::vector<std::uint8_t> out;
    out.reserve(8 + text.size() + offset);
    const std::uint64_t n = text.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& [name, t] : table.tensors) {
        for (float v : t.values) {
            const auto bits = std::bit_cast<std::uint32_t>(v);
            for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
        }
    }
    return out;
}

std::vector<std::pair<std::string, std::vector<std::size_t>>> expected_tensors(const ModelConfig& c) {
    const std::size_t d = c.hidden_dim, m = c.mlp_dim();
    std::vector<std::pair<std::string, std::vector<std::size_t>>> out = {
        {"patch_embed.weight", {static_cast<std::size_t>(c.patch_dim()), d}},
        {"patch_embed.bias", {d}},
        {"pos_embed", {static_cast<std::size_t>(c.token_count()), d}},
        {"cls_token", {d}},
    };
    for (int l = 0; l < c.num_layers; ++l) {
        out.push_back({block_name(l, "ln1.weight"), {d}});
        out.push_back({block_name(l, "ln1.bias"), {d}});
        out.push_back({block_name(l, "attn.qkv.weight"), {d, 3 * d}});
        out.push_back({block_name(l, "attn.qkv.bias"), {3 * d}});
        out.push_back({block_name(l, "attn.out.weight"), {d, d}});
        out.push_back({block_name(l, "attn.out.bias"), {d}});
        out.push_back({block_name(l, "ln2.weight"), {d}});
        out.push_back({block_name(l, "ln2.bias"), {d}});
        out.push_back({block_name(l, "mlp.fc1.weight"), {d, m}});
        out.push_back({block_name(l, "mlp.fc1.bias"), {m}});
        out.push_back({block_name(l, "mlp.fc2.weight"), {m, d}});
        out.push_back({block_name(l, "mlp.fc2.bias"), {d}});
    }
    out.push_back({"final_ln.weight", {d}});
    out.push_back({"final_ln.bias", {d}});
    out.push_back({"head.weight", {d, static_cast<std::size_t>(c.num_classes)}});
    out.push_back({"head.bias", {static_cast<std::size_t>(c.num_classes)}});
    return out;
}

WeightBundle bind_weights(const TensorTable& table, const ModelConfig& config) {
    config.validate();
    const std::size_t d = config.hidden_dim, m = config.mlp_dim();
    WeightBundle w;
    w.config = config;
    w.patch_proj = mat(table, "patch_embed.weight", config.patch_dim(), d);
    w.patch_bias = vec(table, "patch_embed.bias", d);
    w.pos_embed = mat(table, "pos_embed", config.token_count(), d);
    w.cls_token = vec(table, "cls_token", d);
    w.layers.reserve(config.num_layers);
    for (int l = 0; l < config.num_layers; ++l) {
        LayerWeights lw;
        lw.ln1_gamma = vec(table, block_name(l, "ln1.weight"), d);
        lw.ln1_beta = vec(table, block_name(l, "ln1.bias"), d);
        lw.w_qkv = fused_qkv_weight(table, l, d);
        lw.b_qkv = fused_qkv_bias(table, l, d);
        lw.w_out = mat(table, block_name(l, "attn.out.weight"), d, d);
        lw.b_out = vec(table, block_name(l, "attn.out.bias"), d);
        lw.ln2_gamma = vec(table, block_name(l, "ln2.weight"), d);
        lw.ln2_beta = vec(table, block_name(l, "ln2.bias"), d);
        lw.w_mlp1 = mat(table, block_name(l, "mlp.fc1.weight"), d, m);
        lw.b_mlp1 = vec(table, block_name(l, "mlp.fc1.bias"), m);
        lw.w_mlp2 = mat(table, block_name(l, "mlp.fc2.weight"), m, d);
        lw.b_mlp2 = vec(table, block_name(l, "mlp.fc2.bias"), d);
        w.layers.push_back(std::move(lw));
    }
    w.final_ln_gamma = vec(table, "final_ln.weight", d);
    w.final_ln_beta = vec(table, "final_ln.bias", d);
    w.head_w = mat(table, "head.weight", d, config.num_classes);
    w.head_b = vec(table, "head.bias", config.num_classes);
    return w;
}

ModelConfig infer_config(const TensorTable& table, int num_heads_override) {
    auto get = [&](const std::string& name) -> const RawTensor& {
        auto it = table.tensors.find(name);
        if (it == table.tensors.end()) throw Error(ErrorCode::MissingTensor, name);
        return it->second;
    };
    ModelConfig c;
    c.hidden_dim = static_cast<int>(get("patch_embed.bias").element_count());
    const auto& proj = get("patch_embed.weight");
    if (proj.shape.size() != 2 || proj.shape[0] % 3 != 0) {
        throw Error(ErrorCode::ShapeMismatch, "patch_embed.weight must be [3P^2, D], got " + shape_str(proj.shape));
    }
    c.patch_size = exact_sqrt(proj.shape[0] / 3);
    if (c.patch_size < 1) throw Error(ErrorCode::InvalidConfig, "patch_embed.weight rows are not 3*P^2");

    const auto& pos = get("pos_embed");
    if (pos.shape.size() < 2) throw Error(ErrorCode::ShapeMismatch, "pos_embed must be [T, D]");
    const std::size_t tokens = pos.shape[pos.shape.size() - 2];
    c.grid_side = tokens >= 2 ? exact_sqrt(tokens - 1) : -1;
    if (c.grid_side < 1) {
        throw Error(ErrorCode::InvalidConfig, "pos_embed has " + std::to_string(tokens) + " rows, not grid^2+1");
    }
    c.image_side = c.grid_side * c.patch_size;
    c.num_classes = static_cast<int>(get("head.bias").element_count());

    while (table.tensors.count(block_name(c.num_layers, "ln1.weight"))) ++c.num_layers;
    if (c.num_layers == 0) throw Error(ErrorCode::MissingTensor, block_name(0, "ln1.weight"));
    const auto& fc1 = get(block_name(0, "mlp.fc1.bias"));
    if (fc1.element_count() % c.hidden_dim != 0) {
        throw Error(ErrorCode::InvalidConfig, "mlp hidden width is not a multiple of hidden_dim");
    }
    c.mlp_ratio = static_cast<int>(fc1.element_count() / c.hidden_dim);

    if (num_heads_override > 0) {
        c.num_heads = num_heads_override;
    } else if (auto it = table.metadata.find("num_heads"); it != table.metadata.end()) {
        try {
            c.num_heads = std::stoi(it->second);
        } catch (const std::exception&) {
            throw Error(ErrorCode::InvalidConfig, "metadata num_heads is not an integer: " + it->second);
        }
    } else {
        throw Error(ErrorCode::InvalidConfig, "head count unknown: add metadata num_heads or pass it explicitly");
    }
    if (auto it = table.metadata.find("ln_eps"); it != table.metadata.end()) {
        try {
            c.ln_eps = std::stof(it->second);
        } catch (const std::exception&) {
            throw Error(ErrorCode::InvalidConfig, "metadata ln_eps is not a number: " + it->second);
        }
    }
    c.validate();
    return c;
}

TensorTable to_table(const WeightBundle& w) {
    TensorTable t;
    auto put_vec = [&](const std::string& name, const std::vector<float>& v) {
        t.tensors[name] = RawTensor{Dtype::F32, {v.size()}, v};
    };
    auto put_mat = [&](const std::string& name, const Matrix& m) {
        t.tensors[name] = RawTensor{Dtype::F32, {m.rows(), m.cols()}, m.values()};
    };
    put_mat("patch_embed.weight", w.patch_proj);
    put_vec("patch_embed.bias", w.patch_bias);
    put_mat("pos_embed", w.pos_embed);
    put_vec("cls_token", w.cls_token);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const auto& lw = w.layers[l];
        const int li = static_cast<int>(l);
        put_vec(block_name(li, "ln1.weight"), lw.ln1_gamma);
        put_vec(block_name(li, "ln1.bias"), lw.ln1_beta);
        put_mat(block_name(li, "attn.qkv.weight"), lw.w_qkv);
        put_vec(block_name(li, "attn.qkv.bias"), lw.b_qkv);
        put_mat(block_name(li, "attn.out.weight"), lw.w_out);
        put_vec(block_name(li, "attn.out.bias"), lw.b_out);
        put_vec(block_name(li, "ln2.weight"), lw.ln2_gamma);
        put_vec(block_name(li, "ln2.bias"), lw.ln2_beta);
        put_mat(block_name(li, "mlp.fc1.weight"), lw.w_mlp1);
        put_vec(block_name(li, "mlp.fc1.bias"), lw.b_mlp1);
        put_mat(block_name(li, "mlp.fc2.weight"), lw.w_mlp2);
        put_vec(block_name(li, "mlp.fc2.bias"), lw.b_mlp2);
    }
    put_vec("final_ln.weight", w.final_ln_gamma);
    put_vec("final_ln.bias", w.final_ln_beta);
    put_mat("head.weight", w.head_w);
    put_vec("head.bias", w.head_b);
    t.metadata["num_heads"] = std::to_string(w.config.num_heads);
    std::ostringstream eps;
    eps.precision(9);
    eps << w.config.ln_eps;
    t.metadata["ln_eps"] = eps.str();
    return t;
}

WeightBundle random_weights(const ModelConfig& config, std::uint64_t seed, float stddev) {
    config.validate();
    std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
    // uniform with the requested standard deviation; much cheaper than normal
    // sampling at the 300M-parameter scale
    const float half_width = stddev * std::sqrt(3.0f);
    std::uniform_real_distribution<float> dist(-half_width, half_width);
    auto fill = [&](std::size_t n) {
        std::vector<float> v(n);
        for (float& x : v) x = dist(rng);
        return v;
    };
    auto rmat = [&](std::size_t r, std::size_t c) { return Matrix(r, c, fill(r * c)); };
    const std::size_t d = config.hidden_dim, m = config.mlp_dim();

    WeightBundle w;
    w.config = config;
    w.patch_proj = rmat(config.patch_dim(), d);
    w.patch_bias = fill(d);
    w.pos_embed = rmat(config.token_count(), d);
    w.cls_token = fill(d);
    w.layers.resize(config.num_layers);
    for (auto& lw : w.layers) {
        lw.ln1_gamma.assign(d, 1.0f);
        lw.ln1_beta.assign(d, 0.0f);
        lw.w_qkv = rmat(d, 3 * d);
        lw.b_qkv = fill(3 * d);
        lw.w_out = rmat(d, d);
        lw.b_out = fill(d);
        lw.ln2_gamma.assign(d, 1.0f);
        lw.ln2_beta.assign(d, 0.0f);
        lw.w_mlp1 = rmat(d, m);
        lw.b_mlp1 = fill(m);
        lw.w_mlp2 = rmat(m, d);
        lw.b_mlp2 = fill(d);
    }
    w.final_ln_gamma.assign(d, 1.0f);
    w.final_ln_beta.assign(d, 0.0f);
    w.head_w = rmat(d, config.num_classes);
    w.head_b = fill(config.num_classes);
    return w;
}

}  // namespace vitlens
