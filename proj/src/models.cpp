#include "tmc/models.hpp"

#include <json.hpp>

#include "tmc/errors.hpp"

namespace tmc {

using nlohmann::json;

std::string model_kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::Mlp: return "mlp";
        case ModelKind::Cnn: return "cnn";
        case ModelKind::TmcT: return "tmct";
        case ModelKind::TmcVit: return "tmcvit";
    }
    return "?";
}

ModelKind model_kind_from_name(const std::string& name) {
    if (name == "mlp") return ModelKind::Mlp;
    if (name == "cnn") return ModelKind::Cnn;
    if (name == "tmct") return ModelKind::TmcT;
    if (name == "tmcvit") return ModelKind::TmcVit;
    throw ConfigError("unknown model kind '" + name + "' (expected mlp|cnn|tmct|tmcvit)");
}

std::string ModelConfig::to_json() const {
    json j;
    j["schema_version"] = 1;
    j["kind"] = model_kind_name(kind);
    j["channels"] = channels;
    j["samples"] = samples;
    j["seed"] = seed;
    j["mlp_hidden"] = mlp_hidden;
    j["mlp_dropout"] = mlp_dropout;
    j["cnn_filters"] = cnn_filters;
    j["cnn_dense"] = cnn_dense;
    j["cnn_dropout"] = cnn_dropout;
    j["tmct_filters"] = tmct_filters;
    j["tmct_heads"] = tmct_heads;
    j["tmct_blocks"] = tmct_blocks;
    j["tmct_dff"] = tmct_dff;
    j["tmct_dense"] = tmct_dense;
    j["tmct_pos_dropout"] = tmct_pos_dropout;
    j["tmct_residual_dropout"] = tmct_residual_dropout;
    j["tmct_head_dropout"] = tmct_head_dropout;
    j["tmct_flatten_tokens"] = tmct_flatten_tokens;
    j["vit_filters"] = vit_filters;
    j["vit_dmodel"] = vit_dmodel;
    j["vit_heads"] = vit_heads;
    j["vit_blocks"] = vit_blocks;
    j["vit_dff"] = vit_dff;
    j["vit_dense"] = vit_dense;
    j["vit_pos_dropout"] = vit_pos_dropout;
    j["vit_residual_dropout"] = vit_residual_dropout;
    j["vit_head_dropout"] = vit_head_dropout;
    return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: invalid JSON: ") + e.what());
    }
    if (j.value("schema_version", 0) != 1)
        throw ConfigError("model config: unsupported schema_version");
    ModelConfig c;
    c.kind = model_kind_from_name(j.at("kind").get<std::string>());
    c.channels = j.value("channels", c.channels);
    c.samples = j.value("samples", c.samples);
    c.seed = j.value("seed", c.seed);
    c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
    c.mlp_dropout = j.value("mlp_dropout", c.mlp_dropout);
    c.cnn_filters = j.value("cnn_filters", c.cnn_filters);
    c.cnn_dense = j.value("cnn_dense", c.cnn_dense);
    c.cnn_dropout = j.value("cnn_dropout", c.cnn_dropout);
    c.tmct_filters = j.value("tmct_filters", c.tmct_filters);
    c.tmct_heads = j.value("tmct_heads", c.tmct_heads);
    c.tmct_blocks = j.value("tmct_blocks", c.tmct_blocks);
    c.tmct_dff = j.value("tmct_dff", c.tmct_dff);
    c.tmct_dense = j.value("tmct_dense", c.tmct_dense);
    c.tmct_pos_dropout = j.value("tmct_pos_dropout", c.tmct_pos_dropout);
    c.tmct_residual_dropout = j.value("tmct_residual_dropout", c.tmct_residual_dropout);
    c.tmct_head_dropout = j.value("tmct_head_dropout", c.tmct_head_dropout);
    c.tmct_flatten_tokens = j.value("tmct_flatten_tokens", c.tmct_flatten_tokens);
    c.vit_filters = j.value("vit_filters", c.vit_filters);
    c.vit_dmodel = j.value("vit_dmodel", c.vit_dmodel);
    c.vit_heads = j.value("vit_heads", c.vit_heads);
    c.vit_blocks = j.value("vit_blocks", c.vit_blocks);
    c.vit_dff = j.value("vit_dff", c.vit_dff);
    c.vit_dense = j.value("vit_dense", c.vit_dense);
    c.vit_pos_dropout = j.value("vit_pos_dropout", c.vit_pos_dropout);
    c.vit_residual_dropout = j.value("vit_residual_dropout", c.vit_residual_dropout);
    c.vit_head_dropout = j.value("vit_head_dropout", c.vit_head_dropout);
    return c;
}

std::int64_t tmct_token_count(std::int64_t channels, std::int64_t samples) {
    return channels * (samples / 10 / 6 / 6);
}

std::int64_t vit_precrop_width(std::int64_t samples) { return samples / 9 / 7 / 3; }

namespace {

void check_finite(const Tensor& t, const std::string& stage) {
    if (!t.all_finite()) throw NumericalError("non-finite activations after " + stage);
}

void validate_common(const ModelConfig& cfg) {
    if (cfg.channels <= 0 || cfg.samples <= 0)
        throw ConfigError("model config: nonpositive input extents " +
                          std::to_string(cfg.channels) + "x" + std::to_string(cfg.samples));
}

}  // namespace

Tensor Model::forward(const Tensor& x, Mode mode, Rng& rng) {
    if (x.ndim() != 3 || x.dim(1) != cfg_.channels || x.dim(2) != cfg_.samples)
        throw ConfigError("forward: expected [N," + std::to_string(cfg_.channels) + "," +
                          std::to_string(cfg_.samples) + "], got " + shape_str(x.shape()));
    Tensor p = forward_impl(x, mode, rng);
    check_finite(p, "output head");
    return p;
}

std::int64_t Model::parameter_count() {
    std::int64_t n = 0;
    for (const auto& e : state())
        if (e.trainable) n += shape_numel(e.shape);
    return n;
}

// -------------------------------------------------------------------- MLP ---

namespace {

class MlpModel final : public Model {
  public:
    explicit MlpModel(ModelConfig cfg) : Model(std::move(cfg)) {
        validate_common(cfg_);
        if (cfg_.mlp_hidden.empty()) throw ConfigError("mlp: no hidden layers");
        Rng rng(cfg_.seed);
        std::int64_t width = cfg_.channels * cfg_.samples;
        for (auto h : cfg_.mlp_hidden) {
            if (h <= 0) throw ConfigError("mlp: nonpositive hidden width");
            hidden_.emplace_back(width, h, rng);
            width = h;
        }
        head_ = Dense(width, 1, rng);
    }

    std::vector<StateEntry> state() override {
        std::vector<StateEntry> s;
        for (std::size_t i = 0; i < hidden_.size(); ++i)
            hidden_[i].collect("hidden" + std::to_string(i), s);
        head_.collect("head", s);
        return s;
    }

  protected:
    Tensor forward_impl(const Tensor& x, Mode mode, Rng& rng) override {
        Tensor h = reshape(x, {x.dim(0), cfg_.channels * cfg_.samples});
        for (std::size_t i = 0; i < hidden_.size(); ++i) {
            h = dropout(relu(hidden_[i](h)), cfg_.mlp_dropout, mode, rng);
            check_finite(h, "mlp hidden" + std::to_string(i));
        }
        return reshape(sigmoid(head_(h)), {x.dim(0)});
    }

  private:
    std::vector<Dense> hidden_;
    Dense head_;
};

// -------------------------------------------------------------------- CNN ---

struct ConvBlockSpec {
    std::int64_t kh, kw, ph, pw;
};

class CnnModel final : public Model {
  public:
    explicit CnnModel(ModelConfig cfg) : Model(std::move(cfg)) {
        validate_common(cfg_);
        if (cfg_.cnn_filters.size() != 5) throw ConfigError("cnn: expected 5 filter counts");
        const ConvBlockSpec specs[5] = {
            {1, 20, 1, 10}, {1, 20, 1, 10}, {1, 10, 1, 5}, {3, 3, 2, 2}, {3, 3, 2, 2}};
        Rng rng(cfg_.seed);
        std::int64_t c = 1, h = cfg_.channels, w = cfg_.samples;
        for (int i = 0; i < 5; ++i) {
            const auto f = cfg_.cnn_filters[static_cast<std::size_t>(i)];
            if (f <= 0) throw ConfigError("cnn: nonpositive filter count");
            convs_.emplace_back(f, c, specs[i].kh, specs[i].kw, Padding::Same, rng);
            bns_.emplace_back(f);
            // Pool windows are clamped to the available extent so short
            // inputs keep a nonempty map (the 5-second input reaches width 1
            // before the last two 2x2 pools).
            const std::int64_t ph = std::min(specs[i].ph, h);
            const std::int64_t pw = std::min(specs[i].pw, w);
            pools_.push_back({specs[i].kh, specs[i].kw, ph, pw});
            c = f;
            h /= ph;
            w /= pw;
            if (h == 0 || w == 0)
                throw ConfigError("cnn: input " + std::to_string(cfg_.channels) + "x" +
                                  std::to_string(cfg_.samples) + " too small for the pool chain");
        }
        flat_ = c * h * w;
        std::int64_t width = flat_;
        for (auto d : cfg_.cnn_dense) {
            dense_.emplace_back(width, d, rng);
            width = d;
        }
        head_ = Dense(width, 1, rng);
    }

    // Final feature-map extents (channels, height, width) after the pool chain.
    Shape feature_map() const {
        std::int64_t h = cfg_.channels, w = cfg_.samples;
        for (const auto& p : pools_) {
            h /= p.ph;
            w /= p.pw;
        }
        return {cfg_.cnn_filters.back(), h, w};
    }

    std::vector<StateEntry> state() override {
        std::vector<StateEntry> s;
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            convs_[i].collect("conv" + std::to_string(i), s);
            bns_[i].collect("bn" + std::to_string(i), s);
        }
        for (std::size_t i = 0; i < dense_.size(); ++i)
            dense_[i].collect("dense" + std::to_string(i), s);
        head_.collect("head", s);
        return s;
    }

  protected:
    Tensor forward_impl(const Tensor& x, Mode mode, Rng& rng) override {
        Tensor h = reshape(x, {x.dim(0), 1, cfg_.channels, cfg_.samples});
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            h = maxpool2d(relu(bns_[i](convs_[i](h), mode)), pools_[i].ph, pools_[i].pw);
            check_finite(h, "cnn block" + std::to_string(i));
        }
        h = dropout(h, cfg_.cnn_dropout, mode, rng);
        h = reshape(h, {x.dim(0), flat_});
        for (auto& d : dense_) h = relu(d(h));
        return reshape(sigmoid(head_(h)), {x.dim(0)});
    }

  private:
    std::vector<Conv2dLayer> convs_;
    std::vector<BatchNormLayer> bns_;
    std::vector<ConvBlockSpec> pools_;
    std::vector<Dense> dense_;
    Dense head_;
    std::int64_t flat_ = 0;
};

// ------------------------------------------------------------------ TMC-T ---

class TmcTModel final : public Model {
  public:
    explicit TmcTModel(ModelConfig cfg) : Model(std::move(cfg)) {
        validate_common(cfg_);
        if (cfg_.tmct_filters.size() != 3) throw ConfigError("tmct: expected 3 filter counts");
        d_model_ = cfg_.tmct_filters.back();
        tokens_ = tmct_token_count(cfg_.channels, cfg_.samples);
        if (tokens_ <= 0)
            throw ConfigError("tmct: input width " + std::to_string(cfg_.samples) +
                              " yields zero tokens through the pool chain");
        Rng rng(cfg_.seed);
        const std::int64_t kw[3] = {20, 20, 10};
        std::int64_t c = 1;
        for (int i = 0; i < 3; ++i) {
            convs_.emplace_back(cfg_.tmct_filters[static_cast<std::size_t>(i)], c, 1, kw[i],
                                Padding::Same, rng);
            bns_.emplace_back(cfg_.tmct_filters[static_cast<std::size_t>(i)]);
            c = cfg_.tmct_filters[static_cast<std::size_t>(i)];
        }
        pos_ = Tensor::param({tokens_, d_model_}, init::normal(tokens_ * d_model_, 0.02, rng));
        for (std::int64_t b = 0; b < cfg_.tmct_blocks; ++b)
            blocks_.emplace_back(d_model_, cfg_.tmct_heads, cfg_.tmct_dff,
                                 cfg_.tmct_residual_dropout, rng);
        std::int64_t width = cfg_.tmct_flatten_tokens ? tokens_ * d_model_ : d_model_;
        for (auto d : cfg_.tmct_dense) {
            dense_.emplace_back(width, d, rng);
            width = d;
        }
        head_ = Dense(width, 1, rng);
    }

    std::int64_t token_count() const { return tokens_; }
    std::int64_t embedding_width() const { return d_model_; }

    std::vector<StateEntry> state() override {
        std::vector<StateEntry> s;
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            convs_[i].collect("conv" + std::to_string(i), s);
            bns_[i].collect("bn" + std::to_string(i), s);
        }
        s.push_back({"pos_embedding", pos_.shape(), &pos_.values(), true, pos_});
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect("encoder" + std::to_string(i), s);
        for (std::size_t i = 0; i < dense_.size(); ++i)
            dense_[i].collect("dense" + std::to_string(i), s);
        head_.collect("head", s);
        return s;
    }

  protected:
    Tensor forward_impl(const Tensor& x, Mode mode, Rng& rng) override {
        Tensor h = reshape(x, {x.dim(0), 1, cfg_.channels, cfg_.samples});
        const std::int64_t pw[3] = {10, 6, 6};
        for (int i = 0; i < 3; ++i) {
            h = maxpool2d(relu(bns_[static_cast<std::size_t>(i)](
                              convs_[static_cast<std::size_t>(i)](h), mode)),
                          1, pw[i]);
            check_finite(h, "tmct embed block" + std::to_string(i));
        }
        // [N, F, H, W] -> [N, H*W, F]: each spatial position becomes a token.
        h = transpose(transpose(h, 1, 2), 2, 3);
        h = reshape(h, {x.dim(0), tokens_, d_model_});
        h = dropout(add(h, pos_), cfg_.tmct_pos_dropout, mode, rng);
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            h = blocks_[i](h, mode, rng);
            check_finite(h, "tmct encoder" + std::to_string(i));
        }
        h = cfg_.tmct_flatten_tokens ? reshape(h, {x.dim(0), tokens_ * d_model_})
                                     : reduce_mean(h, 1);
        for (auto& d : dense_) h = dropout(relu(d(h)), cfg_.tmct_head_dropout, mode, rng);
        return reshape(sigmoid(head_(h)), {x.dim(0)});
    }

  private:
    std::vector<Conv2dLayer> convs_;
    std::vector<BatchNormLayer> bns_;
    Tensor pos_;
    std::vector<EncoderBlock> blocks_;
    std::vector<Dense> dense_;
    Dense head_;
    std::int64_t d_model_ = 0;
    std::int64_t tokens_ = 0;
};

// ---------------------------------------------------------------- TMC-ViT ---

class TmcVitModel final : public Model {
  public:
    static constexpr std::int64_t kGrid = 21;   // post-crop conv output grid
    static constexpr std::int64_t kPatch = 3;   // patch edge
    static constexpr std::int64_t kCrop = 23;   // center-crop width before the valid conv

    explicit TmcVitModel(ModelConfig cfg) : Model(std::move(cfg)) {
        validate_common(cfg_);
        if (cfg_.vit_filters.size() != 4) throw ConfigError("tmcvit: expected 4 filter counts");
        if (cfg_.channels != kCrop)
            throw ConfigError("tmcvit: requires 23 input channels, got " +
                              std::to_string(cfg_.channels));
        precrop_w_ = vit_precrop_width(cfg_.samples);
        if (precrop_w_ < kCrop)
            throw ConfigError("tmcvit: input length " + std::to_string(cfg_.samples) +
                              " reaches only " + std::to_string(precrop_w_) +
                              " columns before the crop (needs >= " + std::to_string(kCrop) + ")");
        Rng rng(cfg_.seed);
        const std::int64_t kw[3] = {20, 20, 10};
        std::int64_t c = 1;
        for (int i = 0; i < 3; ++i) {
            convs_.emplace_back(cfg_.vit_filters[static_cast<std::size_t>(i)], c, 1, kw[i],
                                Padding::Same, rng);
            bns_.emplace_back(cfg_.vit_filters[static_cast<std::size_t>(i)]);
            c = cfg_.vit_filters[static_cast<std::size_t>(i)];
        }
        conv4_ = Conv2dLayer(cfg_.vit_filters[3], c, 3, 3, Padding::Valid, rng);
        bn4_ = BatchNormLayer(cfg_.vit_filters[3]);
        patches_ = (kGrid / kPatch) * (kGrid / kPatch);  // 49
        patch_dim_ = cfg_.vit_filters[3] * kPatch * kPatch;
        proj_ = Dense(patch_dim_, cfg_.vit_dmodel, rng);
        pos_ = Tensor::param({patches_, cfg_.vit_dmodel},
                             init::normal(patches_ * cfg_.vit_dmodel, 0.02, rng));
        for (std::int64_t b = 0; b < cfg_.vit_blocks; ++b)
            blocks_.emplace_back(cfg_.vit_dmodel, cfg_.vit_heads, cfg_.vit_dff,
                                 cfg_.vit_residual_dropout, rng);
        std::int64_t width = patches_ * cfg_.vit_dmodel;
        for (auto d : cfg_.vit_dense) {
            dense_.emplace_back(width, d, rng);
            width = d;
        }
        head_ = Dense(width, 1, rng);
    }

    std::int64_t patch_count() const { return patches_; }
    std::int64_t patch_dim() const { return patch_dim_; }

    std::vector<StateEntry> state() override {
        std::vector<StateEntry> s;
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            convs_[i].collect("conv" + std::to_string(i), s);
            bns_[i].collect("bn" + std::to_string(i), s);
        }
        conv4_.collect("conv3", s);
        bn4_.collect("bn3", s);
        proj_.collect("patch_proj", s);
        s.push_back({"pos_embedding", pos_.shape(), &pos_.values(), true, pos_});
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect("encoder" + std::to_string(i), s);
        for (std::size_t i = 0; i < dense_.size(); ++i)
            dense_[i].collect("dense" + std::to_string(i), s);
        head_.collect("head", s);
        return s;
    }

    // Exposed so tests can anchor the 21x21 embedding grid directly.
    Tensor embed_grid(const Tensor& x, Mode mode, Rng& rng) {
        Tensor h = reshape(x, {x.dim(0), 1, cfg_.channels, cfg_.samples});
        const std::int64_t pw[3] = {9, 7, 3};
        for (int i = 0; i < 3; ++i) {
            h = maxpool2d(relu(bns_[static_cast<std::size_t>(i)](
                              convs_[static_cast<std::size_t>(i)](h), mode)),
                          1, pw[i]);
            check_finite(h, "tmcvit embed block" + std::to_string(i));
        }
        // Center-crop the width axis to 23 columns, then one valid 3x3 conv
        // brings the 23x23 map to the 21x21 grid.
        const std::int64_t start = (h.dim(3) - kCrop) / 2;
        h = slice(h, 3, start, kCrop);
        h = relu(bn4_(conv4_(h), mode));
        check_finite(h, "tmcvit grid conv");
        return h;  // [N, F4, 21, 21]
    }

  protected:
    Tensor forward_impl(const Tensor& x, Mode mode, Rng& rng) override {
        Tensor grid = embed_grid(x, mode, rng);
        // Non-overlapping 3x3 patches, flattened and linearly projected.
        std::vector<Tensor> patch_rows;
        patch_rows.reserve(static_cast<std::size_t>(patches_));
        for (std::int64_t pi = 0; pi < kGrid / kPatch; ++pi) {
            Tensor band = slice(grid, 2, pi * kPatch, kPatch);
            for (std::int64_t pj = 0; pj < kGrid / kPatch; ++pj) {
                Tensor patch = slice(band, 3, pj * kPatch, kPatch);
                patch_rows.push_back(reshape(patch, {x.dim(0), 1, patch_dim_}));
            }
        }
        Tensor tok = proj_(concat(patch_rows, 1));  // [N, 49, d]
        tok = dropout(add(tok, pos_), cfg_.vit_pos_dropout, mode, rng);
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            tok = blocks_[i](tok, mode, rng);
            check_finite(tok, "tmcvit encoder" + std::to_string(i));
        }
        Tensor h = reshape(tok, {x.dim(0), patches_ * cfg_.vit_dmodel});
        for (auto& d : dense_) h = relu(d(h));
        h = dropout(h, cfg_.vit_head_dropout, mode, rng);
        return reshape(sigmoid(head_(h)), {x.dim(0)});
    }

  private:
    std::vector<Conv2dLayer> convs_;
    std::vector<BatchNormLayer> bns_;
    Conv2dLayer conv4_;
    BatchNormLayer bn4_;
    Dense proj_;
    Tensor pos_;
    std::vector<EncoderBlock> blocks_;
    std::vector<Dense> dense_;
    Dense head_;
    std::int64_t precrop_w_ = 0;
    std::int64_t patches_ = 0;
    std::int64_t patch_dim_ = 0;
};

}  // namespace

std::unique_ptr<Model> build_mlp(const ModelConfig& cfg) {
    if (cfg.kind != ModelKind::Mlp) throw ConfigError("build_mlp: config kind is not mlp");
    return std::make_unique<MlpModel>(cfg);
}

std::unique_ptr<Model> build_cnn(const ModelConfig& cfg) {
    if (cfg.kind != ModelKind::Cnn) throw ConfigError("build_cnn: config kind is not cnn");
    return std::make_unique<CnnModel>(cfg);
}

std::unique_ptr<Model> build_tmct(const ModelConfig& cfg) {
    if (cfg.kind != ModelKind::TmcT) throw ConfigError("build_tmct: config kind is not tmct");
    return std::make_unique<TmcTModel>(cfg);
}

std::unique_ptr<Model> build_tmcvit(const ModelConfig& cfg) {
    if (cfg.kind != ModelKind::TmcVit)
        throw ConfigError("build_tmcvit: config kind is not tmcvit");
    return std::make_unique<TmcVitModel>(cfg);
}

std::unique_ptr<Model> build_model(const ModelConfig& cfg) {
    switch (cfg.kind) {
        case ModelKind::Mlp: return build_mlp(cfg);
        case ModelKind::Cnn: return build_cnn(cfg);
        case ModelKind::TmcT: return build_tmct(cfg);
        case ModelKind::TmcVit: return build_tmcvit(cfg);
    }
    throw ConfigError("build_model: invalid kind");
}

}  // namespace tmc
