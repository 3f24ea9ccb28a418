#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tmc/attention.hpp"
#include "tmc/nn.hpp"
#include "tmc/tensor.hpp"

namespace tmc {

enum class ModelKind { Mlp, Cnn, TmcT, TmcVit };

std::string model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

// Declarative description of one architecture; parameter shapes are a pure
// function of this struct, so checkpoints validate against it.
struct ModelConfig {
    ModelKind kind = ModelKind::Cnn;
    std::int64_t channels = 23;
    std::int64_t samples = 5120;  // 1280 for 5-second windows
    std::uint64_t seed = 0;

    // MLP
    std::vector<std::int64_t> mlp_hidden = {300, 100, 50, 20};
    double mlp_dropout = 0.3;

    // CNN (kernels/pools are fixed by the architecture; filters and the
    // classifier widths scale)
    std::vector<std::int64_t> cnn_filters = {16, 32, 64, 128, 256};
    std::vector<std::int64_t> cnn_dense = {256, 64};
    double cnn_dropout = 0.5;

    // TMC-T
    std::vector<std::int64_t> tmct_filters = {16, 32, 32};  // last one is d_model
    std::int64_t tmct_heads = 8;
    std::int64_t tmct_blocks = 2;
    std::int64_t tmct_dff = 64;
    std::vector<std::int64_t> tmct_dense = {64, 16};
    double tmct_pos_dropout = 0.1;
    double tmct_residual_dropout = 0.1;
    double tmct_head_dropout = 0.5;
    bool tmct_flatten_tokens = false;  // default: mean-pool over tokens

    // TMC-ViT
    std::vector<std::int64_t> vit_filters = {16, 32, 64, 64};
    std::int64_t vit_dmodel = 64;
    std::int64_t vit_heads = 4;
    std::int64_t vit_blocks = 8;
    std::int64_t vit_dff = 64;
    std::vector<std::int64_t> vit_dense = {2048, 1024};
    double vit_pos_dropout = 0.1;
    double vit_residual_dropout = 0.1;
    double vit_head_dropout = 0.5;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

// Shape oracles shared with tests and build-time validation.
// TMC-T token count: 23 * floor(floor(floor(L/10)/6)/6) for channel count 23.
std::int64_t tmct_token_count(std::int64_t channels, std::int64_t samples);
// TMC-ViT pre-crop width after the three pooled conv stages.
std::int64_t vit_precrop_width(std::int64_t samples);

class Model {
  public:
    virtual ~Model() = default;

    // x: [N, channels, samples] -> probabilities [N] in (0,1).
    Tensor forward(const Tensor& x, Mode mode, Rng& rng);

    virtual std::vector<StateEntry> state() = 0;
    const ModelConfig& config() const { return cfg_; }
    std::int64_t parameter_count();

  protected:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {}
    virtual Tensor forward_impl(const Tensor& x, Mode mode, Rng& rng) = 0;
    ModelConfig cfg_;
};

std::unique_ptr<Model> build_mlp(const ModelConfig& cfg);
std::unique_ptr<Model> build_cnn(const ModelConfig& cfg);
std::unique_ptr<Model> build_tmct(const ModelConfig& cfg);
std::unique_ptr<Model> build_tmcvit(const ModelConfig& cfg);
std::unique_ptr<Model> build_model(const ModelConfig& cfg);

}  // namespace tmc
