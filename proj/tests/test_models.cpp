#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "tmc/errors.hpp"
#include "tmc/models.hpp"

using namespace tmc;

namespace {

std::map<std::string, Shape> state_shapes(Model& m) {
    std::map<std::string, Shape> out;
    for (const auto& e : m.state()) out[e.name] = e.shape;
    return out;
}

Tensor rand_input(std::int64_t n, std::int64_t c, std::int64_t l, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(static_cast<std::size_t>(n * c * l));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor::from({n, c, l}, v);
}

ModelConfig small_mlp() {
    ModelConfig c;
    c.kind = ModelKind::Mlp;
    c.channels = 4;
    c.samples = 32;
    c.mlp_hidden = {16, 8};
    c.seed = 7;
    return c;
}

ModelConfig small_cnn(std::int64_t samples = 1280) {
    ModelConfig c;
    c.kind = ModelKind::Cnn;
    c.samples = samples;
    c.cnn_filters = {2, 2, 2, 4, 4};
    c.cnn_dense = {8};
    c.seed = 7;
    return c;
}

ModelConfig small_tmct() {
    ModelConfig c;
    c.kind = ModelKind::TmcT;
    c.samples = 720;
    c.tmct_filters = {2, 2, 4};
    c.tmct_heads = 2;
    c.tmct_blocks = 1;
    c.tmct_dff = 8;
    c.tmct_dense = {8};
    c.seed = 7;
    return c;
}

ModelConfig small_vit() {
    ModelConfig c;
    c.kind = ModelKind::TmcVit;
    c.samples = 4536;  // 4536/9/7/3 = 24 columns before the crop
    c.vit_filters = {2, 2, 2, 4};
    c.vit_dmodel = 8;
    c.vit_heads = 2;
    c.vit_blocks = 1;
    c.vit_dff = 8;
    c.vit_dense = {16};
    c.seed = 7;
    return c;
}

// Independent pool-chain walk mirroring the architecture's fixed pools with
// the clamp-to-extent rule, used as the CNN shape oracle.
std::int64_t cnn_flat_oracle(std::int64_t channels, std::int64_t samples, std::int64_t last_f) {
    const std::int64_t ph[5] = {1, 1, 1, 2, 2};
    const std::int64_t pw[5] = {10, 10, 5, 2, 2};
    std::int64_t h = channels, w = samples;
    for (int i = 0; i < 5; ++i) {
        h /= std::min(ph[i], h);
        w /= std::min(pw[i], w);
    }
    return last_f * h * w;
}

}  // namespace

TEST_CASE("tmct token count anchors") {
    // floor(floor(floor(5120/10)/6)/6) = floor(floor(512/6)/6) = floor(85/6) = 14
    CHECK(tmct_token_count(23, 5120) == 23 * 14);
    CHECK(tmct_token_count(23, 5120) == 322);
    // 1280 -> 128 -> 21 -> 3
    CHECK(tmct_token_count(23, 1280) == 23 * 3);
    CHECK(tmct_token_count(23, 1280) == 69);
    CHECK(tmct_token_count(23, 300) == 0);
}

TEST_CASE("tmct positional table matches token count at paper sizes") {
    ModelConfig c;
    c.kind = ModelKind::TmcT;
    c.samples = 5120;
    auto m = build_tmct(c);
    auto s = state_shapes(*m);
    CHECK(s.at("pos_embedding") == Shape{322, 32});

    c.samples = 1280;
    auto m5 = build_tmct(c);
    CHECK(state_shapes(*m5).at("pos_embedding") == Shape{69, 32});
}

TEST_CASE("tmct rejects inputs the pool chain collapses") {
    ModelConfig c = small_tmct();
    c.samples = 300;
    CHECK_THROWS_AS((void)build_tmct(c), ConfigError);
}

TEST_CASE("vit precrop width and grid anchors") {
    // 5120/9 = 568, 568/7 = 81, 81/3 = 27
    CHECK(vit_precrop_width(5120) == 27);
    CHECK(vit_precrop_width(1280) == 6);

    ModelConfig c;
    c.kind = ModelKind::TmcVit;
    c.samples = 5120;
    auto m = build_tmcvit(c);
    auto s = state_shapes(*m);
    // 21x21 grid in 3x3 patches -> 49 tokens of 64*3*3 = 576 features
    CHECK(s.at("pos_embedding") == Shape{49, 64});
    CHECK(s.at("patch_proj.weight") == Shape{576, 64});
    CHECK(s.at("conv3.weight") == Shape{64, 64, 3, 3});
    CHECK(s.at("dense0.weight") == Shape{49 * 64, 2048});
    CHECK(s.at("dense1.weight") == Shape{2048, 1024});
}

TEST_CASE("vit rejects infeasible inputs") {
    ModelConfig c = small_vit();
    c.samples = 1280;  // pre-crop width 6 < 23
    CHECK_THROWS_AS((void)build_tmcvit(c), ConfigError);
    c = small_vit();
    c.channels = 18;
    CHECK_THROWS_AS((void)build_tmcvit(c), ConfigError);
}

TEST_CASE("cnn shape trace at both paper input lengths") {
    ModelConfig c;
    c.kind = ModelKind::Cnn;
    c.samples = 5120;
    auto m = build_cnn(c);
    // widths 5120->512->51->10->5->2, heights 23->23->23->11->5
    CHECK(cnn_flat_oracle(23, 5120, 256) == 256 * 5 * 2);
    CHECK(state_shapes(*m).at("dense0.weight") == Shape{2560, 256});

    c.samples = 1280;
    auto m5 = build_cnn(c);
    CHECK(state_shapes(*m5).at("dense0.weight") ==
          Shape{cnn_flat_oracle(23, 1280, 256), 256});
}

TEST_CASE("mlp parameter count") {
    ModelConfig c;
    c.kind = ModelKind::Mlp;
    auto m = build_mlp(c);
    // 117760*300+300 + 300*100+100 + 100*50+50 + 50*20+20 + 20*1+1
    std::int64_t expect = 0;
    std::int64_t in = 23 * 5120;
    for (std::int64_t h : {300LL, 100LL, 50LL, 20LL, 1LL}) {
        expect += in * h + h;
        in = h;
    }
    CHECK(expect == 35364491);
    CHECK(m->parameter_count() == expect);
    CHECK(state_shapes(*m).at("hidden0.weight") == Shape{117760, 300});
}

TEST_CASE("config json round trip") {
    ModelConfig c = small_vit();
    c.vit_heads = 4;
    c.tmct_head_dropout = 0.25;
    ModelConfig d = ModelConfig::from_json(c.to_json());
    CHECK(d.kind == c.kind);
    CHECK(d.samples == c.samples);
    CHECK(d.vit_filters == c.vit_filters);
    CHECK(d.vit_heads == 4);
    CHECK(d.tmct_head_dropout == doctest::Approx(0.25));
    CHECK(d.mlp_hidden == c.mlp_hidden);

    CHECK_THROWS_AS((void)ModelConfig::from_json("not json"), ConfigError);
    CHECK_THROWS_AS((void)model_kind_from_name("lstm"), ConfigError);
}

TEST_CASE("same seed builds identical parameters") {
    for (const ModelConfig& c :
         {small_mlp(), small_cnn(), small_tmct(), small_vit()}) {
        auto a = build_model(c);
        auto b = build_model(c);
        auto sa = a->state();
        auto sb = b->state();
        REQUIRE(sa.size() == sb.size());
        for (std::size_t i = 0; i < sa.size(); ++i) {
            CHECK(sa[i].name == sb[i].name);
            CHECK(*sa[i].data == *sb[i].data);
        }
    }
}

TEST_CASE("forward emits one probability per row") {
    for (const ModelConfig& c :
         {small_mlp(), small_cnn(), small_tmct(), small_vit()}) {
        auto m = build_model(c);
        Tensor x = rand_input(3, c.channels, c.samples, 11);
        Rng rng(1);
        Tensor p = m->forward(x, Mode::Eval, rng);
        REQUIRE(p.shape() == Shape{3});
        for (double v : p.values()) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
}

TEST_CASE("eval forward is deterministic and row independent") {
    ModelConfig c = small_cnn();
    auto m = build_cnn(c);
    Tensor x2 = rand_input(2, c.channels, c.samples, 3);
    Rng r1(1), r2(2);
    auto a = m->forward(x2, Mode::Eval, r1).values();
    auto b = m->forward(x2, Mode::Eval, r2).values();
    CHECK(a == b);

    // First row alone gives the same probability as inside the batch.
    std::vector<double> row0(x2.values().begin(),
                             x2.values().begin() + c.channels * c.samples);
    Tensor x1 = Tensor::from({1, c.channels, c.samples}, row0);
    Rng r3(9);
    auto single = m->forward(x1, Mode::Eval, r3).values();
    CHECK(single[0] == doctest::Approx(a[0]).epsilon(1e-12));
}

TEST_CASE("zeroed head yields 0.5") {
    auto m = build_mlp(small_mlp());
    for (auto& e : m->state())
        if (e.name == "head.weight" || e.name == "head.bias")
            for (auto& v : *e.data) v = 0.0;
    Rng rng(1);
    Tensor p = m->forward(rand_input(2, 4, 32, 5), Mode::Eval, rng);
    CHECK(p.values()[0] == doctest::Approx(0.5));
    CHECK(p.values()[1] == doctest::Approx(0.5));
}

TEST_CASE("forward validates input shape") {
    auto m = build_mlp(small_mlp());
    Rng rng(1);
    CHECK_THROWS_AS((void)m->forward(rand_input(2, 4, 30, 5), Mode::Eval, rng), ConfigError);
    CHECK_THROWS_AS((void)m->forward(Tensor::zeros({4, 32}), Mode::Eval, rng), ConfigError);
}

TEST_CASE("train-mode forward is reproducible under a reset rng") {
    ModelConfig c = small_tmct();
    auto m = build_tmct(c);
    Tensor x = rand_input(2, c.channels, c.samples, 4);
    Rng r1(42);
    auto a = m->forward(x, Mode::Train, r1).values();
    Rng r2(42);
    auto b = m->forward(x, Mode::Train, r2).values();
    CHECK(a == b);
}

TEST_CASE("builders reject mismatched kinds") {
    CHECK_THROWS_AS((void)build_cnn(small_mlp()), ConfigError);
    CHECK_THROWS_AS((void)build_model([] {
                        ModelConfig c = small_cnn();
                        c.cnn_filters = {1, 2};
                        return c;
                    }()),
                    ConfigError);
}
