#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numeric>

#include "test_support.hpp"
#include "vitlens/error.hpp"
#include "vitlens/model.hpp"

using namespace vitlens;
using testing::golden;
using testing::max_abs_diff;
using testing::to_matrix;

namespace {

PatchMatrix golden_patches() {
    PatchMatrix p;
    p.grid_side = 2;
    p.patch_size = 2;
    p.vectors = to_matrix(golden()["patches"]);
    p.origins = {{0, 0}, {0, 2}, {2, 0}, {2, 2}};
    return p;
}

PatchMatrix random_patches(std::mt19937& rng, const ModelConfig& c) {
    PatchMatrix p;
    p.grid_side = c.grid_side;
    p.patch_size = c.patch_size;
    p.vectors = testing::random_matrix(rng, c.num_patches(), c.patch_dim());
    for (int r = 0; r < c.grid_side; ++r)
        for (int col = 0; col < c.grid_side; ++col) p.origins.push_back({r * c.patch_size, col * c.patch_size});
    return p;
}

void zero(Matrix& m) { std::fill(m.data().begin(), m.data().end(), 0.0f); }
void zero(std::vector<float>& v) { std::fill(v.begin(), v.end(), 0.0f); }

bool bit_equal(const Matrix& a, const Matrix& b) { return a == b; }

}  // namespace

TEST_CASE("embed_tokens with zero projection and positions gives [cls; 0]") {
    auto w = testing::tiny_weights();
    zero(w.patch_proj);
    zero(w.patch_bias);
    zero(w.pos_embed);
    auto x = embed_tokens(golden_patches(), w);
    REQUIRE(x.rows() == 5);
    CHECK(std::equal(w.cls_token.begin(), w.cls_token.end(), x.row(0).begin()));
    for (std::size_t r = 1; r < 5; ++r)
        for (float v : x.row(r)) CHECK(v == 0.0f);
}

TEST_CASE("embed_tokens matches the reference") {
    auto x = embed_tokens(golden_patches(), testing::tiny_weights());
    CHECK(max_abs_diff(x, to_matrix(golden()["tokens_embedded"])) <= 1e-5);
}

TEST_CASE("multi-head attention sublayer matches the reference") {
    const auto& w = testing::tiny_weights();
    const auto& sub = golden()["sublayer"];
    auto [out, rec] = multi_head_attention(to_matrix(sub["input"]), w.layers[0], w.config, 0);
    CHECK(max_abs_diff(out, to_matrix(sub["mha_output"])) <= 1e-5);
    REQUIRE(rec.num_heads() == 2);
    for (int h = 0; h < 2; ++h) CHECK(max_abs_diff(rec.weights[h], to_matrix(sub["mha_attention"][h])) <= 1e-5);
}

TEST_CASE("identical tokens attend uniformly") {
    const auto& w = testing::tiny_weights();
    std::mt19937 rng(3);
    auto row = testing::random_vector(rng, 8);
    Matrix x(5, 8);
    for (std::size_t r = 0; r < 5; ++r) std::copy(row.begin(), row.end(), x.row(r).begin());
    auto [out, rec] = multi_head_attention(x, w.layers[1], w.config, 1);
    for (const auto& a : rec.weights)
        for (float v : a.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-6));
}

TEST_CASE("encoder block matches the reference") {
    const auto& sub = golden()["sublayer"];
    auto [y, rec] = encoder_block(to_matrix(sub["input"]), testing::tiny_weights(), 0);
    CHECK(max_abs_diff(y, to_matrix(sub["block_output"])) <= 1e-5);
    CHECK(rec.layer == 0);
}

TEST_CASE("a block with zero output projections is the identity") {
    auto w = testing::tiny_weights();
    for (auto& lw : w.layers) {
        zero(lw.w_out);
        zero(lw.b_out);
        zero(lw.w_mlp2);
        zero(lw.b_mlp2);
    }
    const auto x = to_matrix(golden()["sublayer"]["input"]);
    CHECK(bit_equal(encoder_block(x, w, 0).first, x));

    // with every block ablated the CLS state never changes
    auto trace = forward(golden_patches(), w);
    for (std::size_t l = 1; l < trace.cls_per_layer.rows(); ++l) {
        CHECK(std::equal(trace.cls_per_layer.row(l).begin(), trace.cls_per_layer.row(l).end(),
                         trace.cls_per_layer.row(0).begin()));
    }
}

TEST_CASE("classification head") {
    const auto& sub = golden()["sublayer"];
    auto cls = testing::flat(sub["cls_input"]);
    SUBCASE("matches the reference") {
        auto c = classify(cls, testing::tiny_weights());
        CHECK(max_abs_diff(c.logits, testing::flat(sub["cls_logits"])) <= 1e-4);
        CHECK(max_abs_diff(c.probabilities, testing::flat(sub["cls_probabilities"])) <= 1e-4);
    }
    SUBCASE("zero head gives uniform probabilities") {
        auto w = testing::tiny_weights();
        zero(w.head_w);
        zero(w.head_b);
        auto c = classify(cls, w);
        for (float p : c.probabilities) CHECK(p == doctest::Approx(0.2).epsilon(1e-6));
    }
    SUBCASE("wrong CLS width") {
        std::vector<float> short_cls(7, 0.0f);
        CHECK_THROWS_AS(classify(short_cls, testing::tiny_weights()), Error);
    }
}

TEST_CASE("full traced forward pass matches the reference") {
    const auto& g = golden();
    auto t = forward(golden_patches(), testing::tiny_weights(), CaptureFlags::full());
    CHECK(max_abs_diff(t.tokens_embedded, to_matrix(g["tokens_embedded"])) <= 1e-4);
    REQUIRE(t.attention.size() == 2);
    for (int l = 0; l < 2; ++l) {
        CHECK(t.attention[l].layer == l);
        for (int h = 0; h < 2; ++h) {
            CHECK(max_abs_diff(t.attention[l].weights[h], to_matrix(g["attention"][l][h])) <= 1e-4);
            CHECK(max_abs_diff((*t.attention[l].scores)[h], to_matrix(g["scores"][l][h])) <= 1e-4);
        }
    }
    const auto& qkv = *t.attention[0].qkv;
    for (int h = 0; h < 2; ++h) {
        CHECK(max_abs_diff(qkv.q[h], to_matrix(g["layer0_q"][h])) <= 1e-4);
        CHECK(max_abs_diff(qkv.k[h], to_matrix(g["layer0_k"][h])) <= 1e-4);
        CHECK(max_abs_diff(qkv.v[h], to_matrix(g["layer0_v"][h])) <= 1e-4);
    }
    REQUIRE(t.hidden_states->size() == 3);
    for (int l = 0; l < 3; ++l) CHECK(max_abs_diff((*t.hidden_states)[l], to_matrix(g["hidden_states"][l])) <= 1e-4);
    CHECK(max_abs_diff(t.cls_per_layer, to_matrix(g["cls_per_layer"])) <= 1e-4);
    CHECK(max_abs_diff(t.logit_lens, to_matrix(g["logit_lens"])) <= 1e-4);
    CHECK(max_abs_diff(t.final_logits, testing::flat(g["final_logits"])) <= 1e-4);
    CHECK(max_abs_diff(t.probabilities, testing::flat(g["probabilities"])) <= 1e-4);
    CHECK(t.predicted_class == g["predicted_class"].get<int>());
}

TEST_CASE("capture flags control the optional intermediates") {
    const auto& w = testing::tiny_weights();
    auto lean = forward(golden_patches(), w);
    CHECK_FALSE(lean.hidden_states.has_value());
    CHECK_FALSE(lean.attention[0].scores.has_value());
    CHECK_FALSE(lean.attention[0].qkv.has_value());
    auto full = forward(golden_patches(), w, CaptureFlags::full());
    CHECK(full.hidden_states.has_value());
    // the captures do not change the numbers
    CHECK(lean.logit_lens == full.logit_lens);
    CHECK(lean.attention[1].weights == full.attention[1].weights);
}

TEST_CASE("patch count must match the config") {
    std::mt19937 rng(1);
    auto cfg = testing::tiny_config();
    cfg.grid_side = 3;
    cfg.image_side = 6;
    auto p = random_patches(rng, cfg);
    CHECK_THROWS_AS(forward(p, testing::tiny_weights()), Error);
}

TEST_CASE("property: forward is deterministic to the bit") {
    std::mt19937 rng(31);
    const auto& w = testing::tiny_weights();
    for (int trial = 0; trial < 20; ++trial) {
        auto p = random_patches(rng, w.config);
        auto a = forward(p, w, CaptureFlags::full());
        auto b = forward(p, w, CaptureFlags::full());
        CHECK(a.logit_lens == b.logit_lens);
        CHECK(a.cls_per_layer == b.cls_per_layer);
        for (std::size_t l = 0; l < a.attention.size(); ++l) CHECK(a.attention[l].weights == b.attention[l].weights);
        CHECK(a.probabilities == b.probabilities);
    }
}

TEST_CASE("property: attention rows are stochastic and the lens ends at the final logits") {
    std::mt19937 rng(32);
    auto cfg = testing::tiny_config();
    cfg.num_layers = 3;
    cfg.num_heads = 4;
    cfg.hidden_dim = 16;
    cfg.grid_side = 3;
    cfg.image_side = 6;
    cfg.num_classes = 11;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto w = random_weights(cfg, seed, 0.3f);
        auto t = forward(random_patches(rng, cfg), w);
        REQUIRE(t.attention.size() == 3);
        for (const auto& rec : t.attention) {
            REQUIRE(rec.num_heads() == 4);
            for (const auto& a : rec.weights) {
                REQUIRE(a.rows() == 10);
                for (std::size_t r = 0; r < a.rows(); ++r) {
                    double s = 0;
                    for (float v : a.row(r)) {
                        REQUIRE(v >= 0.0f);
                        s += v;
                    }
                    REQUIRE(std::abs(s - 1.0) <= 1e-5);
                }
            }
        }
        REQUIRE(t.logit_lens.rows() == 4);
        REQUIRE(t.logit_lens.cols() == 11);
        CHECK(std::equal(t.final_logits.begin(), t.final_logits.end(), t.logit_lens.row(3).begin()));
        for (std::size_t l = 0; l < 4; ++l) {
            auto direct = apply_head(t.cls_per_layer.row(l), w);
            CHECK(std::equal(direct.begin(), direct.end(), t.logit_lens.row(l).begin()));
        }
        const double psum = std::accumulate(t.probabilities.begin(), t.probabilities.end(), 0.0);
        CHECK(std::abs(psum - 1.0) <= 1e-5);
        const auto best = std::max_element(t.probabilities.begin(), t.probabilities.end()) - t.probabilities.begin();
        CHECK(t.predicted_class == best);
    }
}

TEST_CASE("property: without positional signal, permuting patches permutes the trace") {
    std::mt19937 rng(33);
    auto w = testing::tiny_weights();
    // identical position vectors for every patch token
    for (std::size_t r = 2; r < w.pos_embed.rows(); ++r)
        std::copy(w.pos_embed.row(1).begin(), w.pos_embed.row(1).end(), w.pos_embed.row(r).begin());
    const std::vector<std::size_t> perm = {2, 0, 3, 1};
    for (int trial = 0; trial < 10; ++trial) {
        auto p = random_patches(rng, w.config);
        auto q = p;
        for (std::size_t i = 0; i < 4; ++i)
            std::copy(p.vectors.row(perm[i]).begin(), p.vectors.row(perm[i]).end(), q.vectors.row(i).begin());
        auto a = forward(p, w, CaptureFlags::full());
        auto b = forward(q, w, CaptureFlags::full());
        CHECK(max_abs_diff(a.cls_per_layer, b.cls_per_layer) <= 1e-5);
        CHECK(max_abs_diff(a.logit_lens, b.logit_lens) <= 1e-5);
        for (std::size_t l = 0; l < a.attention.size(); ++l)
            for (int h = 0; h < 2; ++h) {
                const auto& A = a.attention[l].weights[h];
                const auto& B = b.attention[l].weights[h];
                // token i of the permuted run is token perm[i] of the original
                auto orig = [&](std::size_t t) { return t == 0 ? 0 : perm[t - 1] + 1; };
                for (std::size_t i = 0; i < 5; ++i)
                    for (std::size_t j = 0; j < 5; ++j) REQUIRE(std::abs(B(i, j) - A(orig(i), orig(j))) <= 1e-5);
            }
    }
}
