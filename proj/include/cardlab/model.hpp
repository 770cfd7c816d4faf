#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "cardlab/checkpoint.hpp"
#include "cardlab/tape.hpp"

namespace cardlab {

// Plain scaled dot-product attention: softmax(Q K^T / sqrt(d_k)) V.
inline ad::Tape::Id attention(ad::Tape& tape, ad::Tape::Id q, ad::Tape::Id k, ad::Tape::Id v) {
    const double dk = static_cast<double>(tape.value(k).cols);
    auto logits = tape.scale(tape.matmul_nt(q, k), 1.0 / std::sqrt(dk));
    return tape.matmul(tape.softmax_rows(logits), v);
}

struct AttnConfig {
    std::size_t heads = 8;

    // per-head projected width for a sub-layer of model width d
    std::size_t head_width(std::size_t d) const { return std::max<std::size_t>(1, d / heads); }
};

namespace detail {

struct MultiHeadParams {
    std::vector<std::size_t> wq, wk, wv;  // one projection triple per head
    std::size_t wm = 0;
    std::size_t head_dim = 0;
};

struct LayerNormParams {
    std::size_t gain = 0, bias = 0;
};

struct FeedForwardParams {
    std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
};

struct AttnLayerParams {
    MultiHeadParams attn;
    LayerNormParams ln1;
    FeedForwardParams ff;
    LayerNormParams ln2;
};

class ParamBuilder {
public:
    ParamBuilder(ad::ParamStore& store, Rng& rng) : store_(&store), rng_(&rng) {}

    std::size_t weight(const std::string& name, std::size_t rows, std::size_t cols) {
        ad::Tensor t(rows, cols);
        const double bound = std::sqrt(1.0 / static_cast<double>(rows));
        t.fill_uniform(*rng_, -bound, bound);
        return store_->add(name, std::move(t));
    }

    std::size_t bias(const std::string& name, std::size_t cols) {
        return store_->add(name, ad::Tensor(1, cols, 0.0));
    }

    LayerNormParams layer_norm(const std::string& prefix, std::size_t width) {
        return {store_->add(prefix + ".gain", ad::Tensor(1, width, 1.0)),
                store_->add(prefix + ".bias", ad::Tensor(1, width, 0.0))};
    }

    MultiHeadParams multi_head(const std::string& prefix, std::size_t width, std::size_t heads) {
        MultiHeadParams p;
        p.head_dim = AttnConfig{heads}.head_width(width);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::string hp = prefix + ".head" + std::to_string(h);
            p.wq.push_back(weight(hp + ".wq", width, p.head_dim));
            p.wk.push_back(weight(hp + ".wk", width, p.head_dim));
            p.wv.push_back(weight(hp + ".wv", width, p.head_dim));
        }
        p.wm = weight(prefix + ".wm", heads * p.head_dim, width);
        return p;
    }

    FeedForwardParams feed_forward(const std::string& prefix, std::size_t width) {
        FeedForwardParams p;
        p.w1 = weight(prefix + ".w1", width, 2 * width);
        p.b1 = bias(prefix + ".b1", 2 * width);
        p.w2 = weight(prefix + ".w2", 2 * width, width);
        p.b2 = bias(prefix + ".b2", width);
        return p;
    }

    AttnLayerParams attn_layer(const std::string& prefix, std::size_t width, std::size_t heads) {
        AttnLayerParams p;
        p.attn = multi_head(prefix + ".attn", width, heads);
        p.ln1 = layer_norm(prefix + ".ln1", width);
        p.ff = feed_forward(prefix + ".ff", width);
        p.ln2 = layer_norm(prefix + ".ln2", width);
        return p;
    }

private:
    ad::ParamStore* store_;
    Rng* rng_;
};

inline ad::Tape::Id multi_head_forward(ad::Tape& tape, const MultiHeadParams& p, ad::Tape::Id q,
                                       ad::Tape::Id k, ad::Tape::Id v) {
    std::vector<ad::Tape::Id> heads;
    heads.reserve(p.wq.size());
    for (std::size_t h = 0; h < p.wq.size(); ++h) {
        auto qh = tape.matmul(q, tape.param(p.wq[h]));
        auto kh = tape.matmul(k, tape.param(p.wk[h]));
        auto vh = tape.matmul(v, tape.param(p.wv[h]));
        heads.push_back(attention(tape, qh, kh, vh));
    }
    return tape.matmul(tape.concat_cols(heads), tape.param(p.wm));
}

inline ad::Tape::Id feed_forward_forward(ad::Tape& tape, const FeedForwardParams& p,
                                         ad::Tape::Id x) {
    auto h = tape.relu(tape.linear(x, tape.param(p.w1), tape.param(p.b1)));
    return tape.linear(h, tape.param(p.w2), tape.param(p.b2));
}

// residual + layer norm around a sub-layer output
inline ad::Tape::Id add_norm(ad::Tape& tape, const LayerNormParams& ln, ad::Tape::Id x,
                             ad::Tape::Id sub) {
    return tape.layer_norm_rows(tape.add(x, sub), tape.param(ln.gain), tape.param(ln.bias));
}

inline ad::Tape::Id attn_layer_forward(ad::Tape& tape, const AttnLayerParams& p, ad::Tape::Id q,
                                       ad::Tape::Id kv) {
    auto attn = multi_head_forward(tape, p.attn, q, kv, kv);
    auto mid = add_norm(tape, p.ln1, q, attn);
    auto ff = feed_forward_forward(tape, p.ff, mid);
    return add_norm(tape, p.ln2, mid, ff);
}

}  // namespace detail

// A cardinality model maps (DB states matrix, query vector) to a predicted
// log-cardinality through a tape, so the trainer can differentiate it.
class CardModel {
public:
    virtual ~CardModel() = default;

    virtual ad::ParamStore& params() = 0;
    virtual const ad::ParamStore& params() const = 0;
    virtual nlohmann::json manifest() const = 0;

    // scalar node: predicted ln(cardinality)
    virtual ad::Tape::Id forward(ad::Tape& tape, const ad::Tensor& states,
                                 const ad::Tensor& query) const = 0;

    // Several queries against one DB-state snapshot on a single tape; models
    // that derive a shared representation of the states compute it once.
    virtual void forward_batch(ad::Tape& tape, const ad::Tensor& states,
                               const std::vector<const ad::Tensor*>& queries,
                               std::vector<ad::Tape::Id>& preds) const {
        for (const ad::Tensor* q : queries) preds.push_back(forward(tape, states, *q));
    }

    std::size_t param_count() const { return params().total_scalars(); }

    double predict_log_card(const ad::Tensor& states, const ad::Tensor& query) const {
        ad::Tape tape(&params());
        return tape.value(forward(tape, states, query)).item();
    }

    // exp(log-card) clamped to at least one row
    double estimate(const ad::Tensor& states, const ad::Tensor& query) const {
        return log_card_to_estimate(predict_log_card(states, query));
    }

    static double log_card_to_estimate(double log_card) {
        return std::max(1.0, std::exp(std::min(log_card, 60.0)));
    }
};

struct AttnModelDims {
    std::size_t attr_count = 0;  // T
    std::size_t d_x = 40;
    std::size_t d_q = 0;
    std::size_t n_enc = 4;
    std::size_t n_ana = 4;
    std::size_t heads = 8;
};

// Two-module attention estimator: a self-attention encoder summarizes the
// per-attribute histograms into representations aligned with the query
// featurization width, and a cross-attention analyzer reads them with the
// query vector to regress the log-cardinality.
class AttnCardNet : public CardModel {
public:
    AttnCardNet(const AttnModelDims& dims, Rng rng) : dims_(dims) {
        detail::ParamBuilder b(params_, rng);
        for (std::size_t i = 0; i < dims.n_enc; ++i)
            encoder_.push_back(b.attn_layer("enc" + std::to_string(i), dims.d_x, dims.heads));
        proj_w_ = b.weight("proj.w", dims.d_x, dims.d_q);
        proj_b_ = b.bias("proj.b", dims.d_q);
        for (std::size_t i = 0; i < dims.n_ana; ++i)
            analyzer_.push_back(b.attn_layer("ana" + std::to_string(i), dims.d_q, dims.heads));
        head_w_ = b.weight("head.w", dims.d_q, 1);
        head_b_ = b.bias("head.b", 1);
    }

    const AttnModelDims& dims() const { return dims_; }
    ad::ParamStore& params() override { return params_; }
    const ad::ParamStore& params() const override { return params_; }

    nlohmann::json manifest() const override {
        return {{"model", "attn"},     {"T", dims_.attr_count}, {"d_x", dims_.d_x},
                {"d_q", dims_.d_q},    {"n_enc", dims_.n_enc},  {"n_ana", dims_.n_ana},
                {"h", dims_.heads}};
    }

    // T x d_q representations of the DB states
    ad::Tape::Id encode(ad::Tape& tape, const ad::Tensor& states) const {
        if (states.rows != dims_.attr_count || states.cols != dims_.d_x)
            throw ShapeMismatchError("DB states shape " + states.shape_str() + ", expected (" +
                                     std::to_string(dims_.attr_count) + "x" +
                                     std::to_string(dims_.d_x) + ")");
        auto cur = tape.constant(states);
        for (const auto& layer : encoder_) cur = detail::attn_layer_forward(tape, layer, cur, cur);
        return tape.linear(cur, tape.param(proj_w_), tape.param(proj_b_));
    }

    ad::Tape::Id analyze(ad::Tape& tape, ad::Tape::Id z, const ad::Tensor& query) const {
        if (query.rows != 1 || query.cols != dims_.d_q)
            throw ShapeMismatchError("query vector shape " + query.shape_str() + ", expected (1x" +
                                     std::to_string(dims_.d_q) + ")");
        auto y = tape.constant(query);
        for (const auto& layer : analyzer_) y = detail::attn_layer_forward(tape, layer, y, z);
        return tape.linear(y, tape.param(head_w_), tape.param(head_b_));
    }

    ad::Tape::Id forward(ad::Tape& tape, const ad::Tensor& states,
                         const ad::Tensor& query) const override {
        return analyze(tape, encode(tape, states), query);
    }

    void forward_batch(ad::Tape& tape, const ad::Tensor& states,
                       const std::vector<const ad::Tensor*>& queries,
                       std::vector<ad::Tape::Id>& preds) const override {
        auto z = encode(tape, states);
        for (const ad::Tensor* q : queries) preds.push_back(analyze(tape, z, *q));
    }

private:
    AttnModelDims dims_;
    ad::ParamStore params_;
    std::vector<detail::AttnLayerParams> encoder_;
    std::size_t proj_w_ = 0, proj_b_ = 0;
    std::vector<detail::AttnLayerParams> analyzer_;
    std::size_t head_w_ = 0, head_b_ = 0;
};

struct MlpModelDims {
    std::size_t attr_count = 0;
    std::size_t d_x = 40;
    std::size_t d_q = 0;
    std::size_t hidden = 256;
    std::size_t layers = 3;
};

// Baseline without attention: the states matrix is flattened and concatenated
// with the query vector, then pushed through a plain ReLU MLP.
class MlpCardNet : public CardModel {
public:
    MlpCardNet(const MlpModelDims& dims, Rng rng) : dims_(dims) {
        detail::ParamBuilder b(params_, rng);
        std::size_t in = dims.attr_count * dims.d_x + dims.d_q;
        for (std::size_t i = 0; i < dims.layers; ++i) {
            const std::string prefix = "fc" + std::to_string(i);
            w_.push_back(b.weight(prefix + ".w", in, dims.hidden));
            bias_.push_back(b.bias(prefix + ".b", dims.hidden));
            in = dims.hidden;
        }
        out_w_ = b.weight("out.w", in, 1);
        out_b_ = b.bias("out.b", 1);
    }

    const MlpModelDims& dims() const { return dims_; }
    ad::ParamStore& params() override { return params_; }
    const ad::ParamStore& params() const override { return params_; }

    nlohmann::json manifest() const override {
        return {{"model", "mlp"},   {"T", dims_.attr_count},   {"d_x", dims_.d_x},
                {"d_q", dims_.d_q}, {"hidden", dims_.hidden},  {"layers", dims_.layers}};
    }

    ad::Tape::Id forward(ad::Tape& tape, const ad::Tensor& states,
                         const ad::Tensor& query) const override {
        if (states.size() != dims_.attr_count * dims_.d_x || query.cols != dims_.d_q)
            throw ShapeMismatchError("MLP input shape mismatch");
        ad::Tensor flat(1, states.size() + query.cols);
        std::copy(states.data.begin(), states.data.end(), flat.data.begin());
        std::copy(query.data.begin(), query.data.end(), flat.data.begin() + states.size());
        auto cur = tape.constant(std::move(flat));
        for (std::size_t i = 0; i < w_.size(); ++i)
            cur = tape.relu(tape.linear(cur, tape.param(w_[i]), tape.param(bias_[i])));
        return tape.linear(cur, tape.param(out_w_), tape.param(out_b_));
    }

private:
    MlpModelDims dims_;
    ad::ParamStore params_;
    std::vector<std::size_t> w_;
    std::vector<std::size_t> bias_;
    std::size_t out_w_ = 0, out_b_ = 0;
};

// Rebuilds a model from a checkpoint manifest and loads its tensors.
inline std::unique_ptr<CardModel> model_from_checkpoint(const Checkpoint& ck) {
    const auto& m = ck.manifest;
    std::unique_ptr<CardModel> model;
    const std::string kind = m.at("model").get<std::string>();
    if (kind == "attn") {
        AttnModelDims dims;
        dims.attr_count = m.at("T").get<std::size_t>();
        dims.d_x = m.at("d_x").get<std::size_t>();
        dims.d_q = m.at("d_q").get<std::size_t>();
        dims.n_enc = m.at("n_enc").get<std::size_t>();
        dims.n_ana = m.at("n_ana").get<std::size_t>();
        dims.heads = m.at("h").get<std::size_t>();
        model = std::make_unique<AttnCardNet>(dims, Rng(0));
    } else if (kind == "mlp") {
        MlpModelDims dims;
        dims.attr_count = m.at("T").get<std::size_t>();
        dims.d_x = m.at("d_x").get<std::size_t>();
        dims.d_q = m.at("d_q").get<std::size_t>();
        dims.hidden = m.at("hidden").get<std::size_t>();
        dims.layers = m.at("layers").get<std::size_t>();
        model = std::make_unique<MlpCardNet>(dims, Rng(0));
    } else {
        throw IoError("unknown model kind in checkpoint: " + kind);
    }
    ad::ParamStore& dst = model->params();
    if (dst.count() != ck.params.count()) throw IoError("checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < dst.count(); ++i) {
        if (dst.name(i) != ck.params.name(i) ||
            !dst.tensor(i).same_shape(ck.params.tensor(i)))
            throw IoError("checkpoint parameter layout mismatch at " + ck.params.name(i));
        dst.tensor(i) = ck.params.tensor(i);
    }
    return model;
}

}  // namespace cardlab
