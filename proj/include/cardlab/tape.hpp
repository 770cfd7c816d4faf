#pragma once

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <span>
#include <string>
#include <vector>

#include "cardlab/tensor.hpp"

namespace cardlab::ad {

// Ordered registry of named trainable tensors.
class ParamStore {
public:
    std::size_t add(std::string name, Tensor t) {
        names_.push_back(std::move(name));
        tensors_.push_back(std::move(t));
        return tensors_.size() - 1;
    }

    std::size_t count() const { return tensors_.size(); }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    Tensor& tensor(std::size_t i) { return tensors_.at(i); }
    const Tensor& tensor(std::size_t i) const { return tensors_.at(i); }

    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

    std::vector<Tensor> zeros_like() const {
        std::vector<Tensor> out;
        out.reserve(tensors_.size());
        for (const auto& t : tensors_) out.emplace_back(t.rows, t.cols, 0.0);
        return out;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
};

// One forward/backward record-and-replay graph. Parameter leaves reference a
// ParamStore; backward accumulates into caller-owned gradient buffers so one
// set of buffers can gather a whole batch.
class Tape {
public:
    using Id = std::uint32_t;

    explicit Tape(const ParamStore* params = nullptr) : params_(params) {}

    void reset() {
        nodes_.clear();
        grads_.clear();
        param_used_.assign(params_ ? params_->count() : 0, 0);
    }

    std::size_t node_count() const { return nodes_.size(); }

    Id constant(Tensor t) {
        check_finite(t, "constant");
        return push(Op::Const, {}, std::move(t));
    }

    Id param(std::size_t index) {
        if (!params_) throw Error("tape has no parameter store");
        if (param_used_.size() != params_->count()) param_used_.assign(params_->count(), 0);
        param_used_[index] = 1;
        Node n;
        n.op = Op::Param;
        n.param_index = index;
        n.ref = &params_->tensor(index);  // stable until the next optimizer step
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    const Tensor& value(Id id) const {
        const Node& n = nodes_.at(id);
        return n.ref ? *n.ref : n.value;
    }

    Id matmul(Id a, Id b) {
        const Tensor &A = value(a), &B = value(b);
        if (A.cols != B.rows)
            throw ShapeMismatchError("matmul " + A.shape_str() + " x " + B.shape_str());
        Tensor out(A.rows, B.cols);
        mm_nn(A.data.data(), B.data.data(), out.data.data(), A.rows, A.cols, B.cols, false);
        return push(Op::MatMul, {a, b}, std::move(out));
    }

    // A * B^T
    Id matmul_nt(Id a, Id b) {
        const Tensor &A = value(a), &B = value(b);
        if (A.cols != B.cols)
            throw ShapeMismatchError("matmul_nt " + A.shape_str() + " x " + B.shape_str() + "^T");
        Tensor out(A.rows, B.rows);
        mm_nt(A.data.data(), B.data.data(), out.data.data(), A.rows, A.cols, B.rows, false);
        return push(Op::MatMulNT, {a, b}, std::move(out));
    }

    Id add(Id a, Id b) {
        const Tensor &A = value(a), &B = value(b);
        if (!A.same_shape(B))
            throw ShapeMismatchError("add " + A.shape_str() + " + " + B.shape_str());
        Tensor out = A;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
        return push(Op::Add, {a, b}, std::move(out));
    }

    Id scale(Id a, double s) {
        Tensor out = value(a);
        for (double& v : out.data) v *= s;
        Id id = push(Op::Scale, {a}, std::move(out));
        nodes_[id].scalar = s;
        return id;
    }

    Id relu(Id a) {
        Tensor out = value(a);
        for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        return push(Op::Relu, {a}, std::move(out));
    }

    Id softmax_rows(Id a) {
        Tensor out = value(a);
        for (std::size_t r = 0; r < out.rows; ++r) {
            double* row = out.data.data() + r * out.cols;
            double mx = row[0];
            for (std::size_t j = 1; j < out.cols; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < out.cols; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            for (std::size_t j = 0; j < out.cols; ++j) row[j] /= sum;
        }
        return push(Op::SoftmaxRows, {a}, std::move(out));
    }

    // y = gain .* (x - mean)/sqrt(var + 1e-5) + bias, per row; population var.
    Id layer_norm_rows(Id x, Id gain, Id bias) {
        const Tensor& X = value(x);
        const Tensor &G = value(gain), &B = value(bias);
        if (X.cols < 2) throw ShapeMismatchError("layer_norm_rows needs rows of >= 2 elements");
        if (G.rows != 1 || G.cols != X.cols || B.rows != 1 || B.cols != X.cols)
            throw ShapeMismatchError("layer_norm_rows gain/bias must be 1x" +
                                     std::to_string(X.cols));
        Tensor out(X.rows, X.cols);
        Tensor xhat(X.rows, X.cols);
        std::vector<double> inv_std(X.rows);
        const double n = static_cast<double>(X.cols);
        for (std::size_t r = 0; r < X.rows; ++r) {
            const double* row = X.data.data() + r * X.cols;
            double mean = 0.0;
            for (std::size_t j = 0; j < X.cols; ++j) mean += row[j];
            mean /= n;
            double var = 0.0;
            for (std::size_t j = 0; j < X.cols; ++j) {
                const double d = row[j] - mean;
                var += d * d;
            }
            var /= n;
            const double is = 1.0 / std::sqrt(var + kLayerNormEps);
            inv_std[r] = is;
            for (std::size_t j = 0; j < X.cols; ++j) {
                const double xh = (row[j] - mean) * is;
                xhat.at(r, j) = xh;
                out.at(r, j) = G.data[j] * xh + B.data[j];
            }
        }
        Id id = push(Op::LayerNormRows, {x, gain, bias}, std::move(out));
        nodes_[id].aux = std::move(xhat);
        nodes_[id].aux_row = std::move(inv_std);
        return id;
    }

    // x(N x d) * W(d x m) + b(1 x m), bias broadcast over rows
    Id linear(Id x, Id w, Id b) {
        const Tensor &X = value(x), &W = value(w), &B = value(b);
        if (X.cols != W.rows || B.rows != 1 || B.cols != W.cols)
            throw ShapeMismatchError("linear " + X.shape_str() + " * " + W.shape_str() + " + " +
                                     B.shape_str());
        Tensor out(X.rows, W.cols);
        mm_nn(X.data.data(), W.data.data(), out.data.data(), X.rows, X.cols, W.cols, false);
        for (std::size_t r = 0; r < out.rows; ++r)
            for (std::size_t j = 0; j < out.cols; ++j) out.at(r, j) += B.data[j];
        return push(Op::Linear, {x, w, b}, std::move(out));
    }

    Id concat_rows(std::span<const Id> parts) {
        if (parts.empty()) throw ShapeMismatchError("concat_rows of nothing");
        const std::size_t cols = value(parts[0]).cols;
        std::size_t rows = 0;
        for (Id p : parts) {
            if (value(p).cols != cols) throw ShapeMismatchError("concat_rows column mismatch");
            rows += value(p).rows;
        }
        Tensor out(rows, cols);
        std::size_t r0 = 0;
        for (Id p : parts) {
            const Tensor& t = value(p);
            std::copy(t.data.begin(), t.data.end(), out.data.begin() + r0 * cols);
            r0 += t.rows;
        }
        Node n;
        n.op = Op::ConcatRows;
        n.inputs.assign(parts.begin(), parts.end());
        n.value = std::move(out);
        return push_node(std::move(n));
    }

    Id concat_cols(std::span<const Id> parts) {
        if (parts.empty()) throw ShapeMismatchError("concat_cols of nothing");
        const std::size_t rows = value(parts[0]).rows;
        std::size_t cols = 0;
        for (Id p : parts) {
            if (value(p).rows != rows) throw ShapeMismatchError("concat_cols row mismatch");
            cols += value(p).cols;
        }
        Tensor out(rows, cols);
        std::size_t c0 = 0;
        for (Id p : parts) {
            const Tensor& t = value(p);
            for (std::size_t r = 0; r < rows; ++r)
                std::copy(t.data.begin() + r * t.cols, t.data.begin() + (r + 1) * t.cols,
                          out.data.begin() + r * cols + c0);
            c0 += t.cols;
        }
        Node n;
        n.op = Op::ConcatCols;
        n.inputs.assign(parts.begin(), parts.end());
        n.value = std::move(out);
        return push_node(std::move(n));
    }

    Id sum(Id a) {
        double s = 0.0;
        for (double v : value(a).data) s += v;
        return push(Op::Sum, {a}, Tensor::scalar(s));
    }

    // (1/B) * sum_i w_i (p_i - y_i)^2 over column vectors.
    Id mwse(Id preds, Tensor labels, Tensor weights) {
        const Tensor& P = value(preds);
        if (P.cols != 1 || !labels.same_shape(P) || !weights.same_shape(P))
            throw ShapeMismatchError("mwse expects matching Bx1 tensors");
        const double b = static_cast<double>(P.rows);
        double loss = 0.0;
        for (std::size_t i = 0; i < P.rows; ++i) {
            const double d = P.data[i] - labels.data[i];
            loss += weights.data[i] * d * d;
        }
        Id id = push(Op::Mwse, {preds}, Tensor::scalar(loss / b));
        nodes_[id].aux = std::move(labels);
        nodes_[id].aux2 = std::move(weights);
        return id;
    }

    // Accumulates d(seed * loss)/d(param) into `param_grads` (shaped like the
    // ParamStore). The same buffers may be reused across many tapes.
    void backward(Id loss, std::vector<Tensor>& param_grads, double seed = 1.0) {
        const Tensor& L = value(loss);
        if (L.size() != 1) throw ShapeMismatchError("backward needs a scalar loss");
        if (params_ && param_grads.size() != params_->count())
            throw ShapeMismatchError("gradient buffer count mismatch");
        grads_.assign(nodes_.size(), Tensor{});
        grads_[loss] = Tensor::scalar(seed);

        for (std::size_t idx = nodes_.size(); idx-- > 0;) {
            Node& node = nodes_[idx];
            Tensor& g = grads_[idx];
            if (g.empty()) continue;  // not on the path to the loss
            switch (node.op) {
                case Op::Const:
                    break;
                case Op::Param:
                    accumulate(param_grads[node.param_index], g);
                    break;
                case Op::MatMul: {
                    const Tensor& A = value(node.inputs[0]);
                    const Tensor& B = value(node.inputs[1]);
                    Tensor& ga = grad_buffer(node.inputs[0]);
                    Tensor& gb = grad_buffer(node.inputs[1]);
                    mm_nt(g.data.data(), B.data.data(), ga.data.data(), g.rows, g.cols, B.rows,
                          true);
                    mm_tn(A.data.data(), g.data.data(), gb.data.data(), A.rows, A.cols, g.cols,
                          true);
                    break;
                }
                case Op::MatMulNT: {
                    // C = A * B^T: dA += dC * B ; dB += dC^T * A
                    const Tensor& A = value(node.inputs[0]);
                    const Tensor& B = value(node.inputs[1]);
                    Tensor& ga = grad_buffer(node.inputs[0]);
                    Tensor& gb = grad_buffer(node.inputs[1]);
                    mm_nn(g.data.data(), B.data.data(), ga.data.data(), g.rows, g.cols, B.cols,
                          true);
                    mm_tn(g.data.data(), A.data.data(), gb.data.data(), g.rows, g.cols, A.cols,
                          true);
                    break;
                }
                case Op::Add: {
                    accumulate(grad_buffer(node.inputs[0]), g);
                    accumulate(grad_buffer(node.inputs[1]), g);
                    break;
                }
                case Op::Scale: {
                    Tensor& ga = grad_buffer(node.inputs[0]);
                    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += node.scalar * g.data[i];
                    break;
                }
                case Op::Relu: {
                    const Tensor& X = value(node.inputs[0]);
                    Tensor& ga = grad_buffer(node.inputs[0]);
                    for (std::size_t i = 0; i < g.size(); ++i)
                        if (X.data[i] > 0.0) ga.data[i] += g.data[i];
                    break;
                }
                case Op::SoftmaxRows: {
                    const Tensor& Y = node.value;
                    Tensor& ga = grad_buffer(node.inputs[0]);
                    for (std::size_t r = 0; r < Y.rows; ++r) {
                        const double* y = Y.data.data() + r * Y.cols;
                        const double* gy = g.data.data() + r * Y.cols;
                        double dot = 0.0;
                        for (std::size_t j = 0; j < Y.cols; ++j) dot += gy[j] * y[j];
                        double* gx = ga.data.data() + r * Y.cols;
                        for (std::size_t j = 0; j < Y.cols; ++j) gx[j] += y[j] * (gy[j] - dot);
                    }
                    break;
                }
                case Op::LayerNormRows: {
                    const Tensor& G = value(node.inputs[1]);
                    const Tensor& xhat = node.aux;
                    Tensor& gx = grad_buffer(node.inputs[0]);
                    Tensor& gg = grad_buffer(node.inputs[1]);
                    Tensor& gb = grad_buffer(node.inputs[2]);
                    const std::size_t cols = xhat.cols;
                    const double n = static_cast<double>(cols);
                    for (std::size_t r = 0; r < xhat.rows; ++r) {
                        const double* xh = xhat.data.data() + r * cols;
                        const double* gy = g.data.data() + r * cols;
                        double mean_gxh = 0.0, mean_gxh_xh = 0.0;
                        for (std::size_t j = 0; j < cols; ++j) {
                            const double gxh = gy[j] * G.data[j];
                            mean_gxh += gxh;
                            mean_gxh_xh += gxh * xh[j];
                            gg.data[j] += gy[j] * xh[j];
                            gb.data[j] += gy[j];
                        }
                        mean_gxh /= n;
                        mean_gxh_xh /= n;
                        const double is = node.aux_row[r];
                        double* gxr = gx.data.data() + r * cols;
                        for (std::size_t j = 0; j < cols; ++j) {
                            const double gxh = gy[j] * G.data[j];
                            gxr[j] += is * (gxh - mean_gxh - xh[j] * mean_gxh_xh);
                        }
                    }
                    break;
                }
                case Op::Linear: {
                    const Tensor& X = value(node.inputs[0]);
                    const Tensor& W = value(node.inputs[1]);
                    Tensor& gx = grad_buffer(node.inputs[0]);
                    Tensor& gw = grad_buffer(node.inputs[1]);
                    Tensor& gb = grad_buffer(node.inputs[2]);
                    mm_nt(g.data.data(), W.data.data(), gx.data.data(), g.rows, g.cols, W.rows,
                          true);
                    mm_tn(X.data.data(), g.data.data(), gw.data.data(), X.rows, X.cols, g.cols,
                          true);
                    for (std::size_t r = 0; r < g.rows; ++r)
                        for (std::size_t j = 0; j < g.cols; ++j) gb.data[j] += g.at(r, j);
                    break;
                }
                case Op::ConcatRows: {
                    std::size_t r0 = 0;
                    for (Id p : node.inputs) {
                        const Tensor& t = value(p);
                        Tensor& gp = grad_buffer(p);
                        for (std::size_t i = 0; i < t.size(); ++i)
                            gp.data[i] += g.data[r0 * t.cols + i];
                        r0 += t.rows;
                    }
                    break;
                }
                case Op::ConcatCols: {
                    std::size_t c0 = 0;
                    for (Id p : node.inputs) {
                        const Tensor& t = value(p);
                        Tensor& gp = grad_buffer(p);
                        for (std::size_t r = 0; r < t.rows; ++r)
                            for (std::size_t j = 0; j < t.cols; ++j)
                                gp.at(r, j) += g.data[r * g.cols + c0 + j];
                        c0 += t.cols;
                    }
                    break;
                }
                case Op::Sum: {
                    Tensor& ga = grad_buffer(node.inputs[0]);
                    const double s = g.item();
                    for (double& v : ga.data) v += s;
                    break;
                }
                case Op::Mwse: {
                    const Tensor& P = value(node.inputs[0]);
                    Tensor& gp = grad_buffer(node.inputs[0]);
                    const double b = static_cast<double>(P.rows);
                    const double s = g.item();
                    for (std::size_t i = 0; i < P.rows; ++i)
                        gp.data[i] += s * 2.0 * node.aux2.data[i] *
                                      (P.data[i] - node.aux.data[i]) / b;
                    break;
                }
            }
        }
    }

    // Parameters never touched by any node of this tape (their gradient is
    // defined as zero); callers may warn on these.
    std::vector<std::size_t> unused_params() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < param_used_.size(); ++i)
            if (!param_used_[i]) out.push_back(i);
        return out;
    }

private:
    enum class Op {
        Const,
        Param,
        MatMul,
        MatMulNT,
        Add,
        Scale,
        Relu,
        SoftmaxRows,
        LayerNormRows,
        Linear,
        ConcatRows,
        ConcatCols,
        Sum,
        Mwse,
    };

    struct Node {
        Op op = Op::Const;
        std::vector<Id> inputs;
        Tensor value;
        const Tensor* ref = nullptr;  // param leaves alias the store
        Tensor aux;                   // op-specific saved activations
        Tensor aux2;
        std::vector<double> aux_row;  // per-row saved scalars
        double scalar = 0.0;
        std::size_t param_index = 0;
    };

    static constexpr double kLayerNormEps = 1e-5;

    Id push(Op op, std::initializer_list<Id> inputs, Tensor value) {
        check_finite(value, op_name(op));
        Node n;
        n.op = op;
        n.inputs.assign(inputs.begin(), inputs.end());
        n.value = std::move(value);
        return push_node(std::move(n));
    }

    Id push_node(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    Tensor& grad_buffer(Id id) {
        Tensor& g = grads_[id];
        if (g.empty()) {
            const Tensor& v = value(id);
            g = Tensor(v.rows, v.cols, 0.0);
        }
        return g;
    }

    static void accumulate(Tensor& dst, const Tensor& src) {
        if (dst.empty()) dst = Tensor(src.rows, src.cols, 0.0);
        for (std::size_t i = 0; i < src.size(); ++i) dst.data[i] += src.data[i];
    }

    static const char* op_name(Op op) {
        switch (op) {
            case Op::Const: return "constant";
            case Op::Param: return "param";
            case Op::MatMul: return "matmul";
            case Op::MatMulNT: return "matmul_nt";
            case Op::Add: return "add";
            case Op::Scale: return "scale";
            case Op::Relu: return "relu";
            case Op::SoftmaxRows: return "softmax_rows";
            case Op::LayerNormRows: return "layer_norm_rows";
            case Op::Linear: return "linear";
            case Op::ConcatRows: return "concat_rows";
            case Op::ConcatCols: return "concat_cols";
            case Op::Sum: return "sum";
            case Op::Mwse: return "mwse";
        }
        return "?";
    }

    const ParamStore* params_;
    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<char> param_used_;
};

// --- Adam ---------------------------------------------------------------------

struct AdamConfig {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamState {
public:
    explicit AdamState(const ParamStore& params) : m_(params.zeros_like()), v_(params.zeros_like()) {}

    std::uint64_t step_count() const { return t_; }

    void step(ParamStore& params, const std::vector<Tensor>& grads, const AdamConfig& cfg) {
        if (grads.size() != params.count()) throw ShapeMismatchError("adam gradient count mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
        for (std::size_t p = 0; p < params.count(); ++p) {
            Tensor& theta = params.tensor(p);
            const Tensor& g = grads[p];
            if (!g.same_shape(theta)) throw ShapeMismatchError("adam gradient shape mismatch");
            Tensor& m = m_[p];
            Tensor& v = v_[p];
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double gi = g.data[i];
                m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
                v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
                const double mhat = m.data[i] / bc1;
                const double vhat = v.data[i] / bc2;
                theta.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            }
        }
    }

private:
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::uint64_t t_ = 0;
};

inline void zero_grads(std::vector<Tensor>& grads) {
    for (Tensor& g : grads) std::fill(g.data.begin(), g.data.end(), 0.0);
}

}  // namespace cardlab::ad
