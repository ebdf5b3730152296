#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstring>
#include <functional>
#include <istream>
#include <ostream>

#include "cil/rng.hpp"
#include "cil/tensor.hpp"

namespace cil::neural {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

enum class LayerKind : std::uint32_t {
    Dense = 0,
    Conv2d = 1,
    ConvTranspose2d = 2,
    SmoothLeakyRelu = 3,
    Flatten = 4,
    Reshape = 5,
};

/// One layer description. Field use depends on kind:
///   Dense:            in, out
///   Conv2d:           in (channels), out (channels), kernel, stride, pad
///   ConvTranspose2d:  in (channels), out (channels), kernel, stride, pad
///   SmoothLeakyRelu:  alpha
///   Reshape:          reshape = {C, H, W} (applied after the batch dim)
struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    std::int64_t in = 0;
    std::int64_t out = 0;
    std::int64_t kernel = 0;
    std::int64_t stride = 1;
    std::int64_t pad = 0;
    double alpha = 0.1;
    std::array<std::int64_t, 3> reshape{0, 0, 0};
};

inline LayerSpec dense(std::int64_t in, std::int64_t out) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.in = in;
    s.out = out;
    return s;
}
inline LayerSpec conv2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t k = 4, std::int64_t stride = 2,
                        std::int64_t pad = 1) {
    LayerSpec s;
    s.kind = LayerKind::Conv2d;
    s.in = in_ch;
    s.out = out_ch;
    s.kernel = k;
    s.stride = stride;
    s.pad = pad;
    return s;
}
inline LayerSpec conv_transpose2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t k = 4,
                                  std::int64_t stride = 2, std::int64_t pad = 1) {
    LayerSpec s = conv2d(in_ch, out_ch, k, stride, pad);
    s.kind = LayerKind::ConvTranspose2d;
    return s;
}
inline LayerSpec smooth_leaky_relu(double alpha = 0.1) {
    LayerSpec s;
    s.kind = LayerKind::SmoothLeakyRelu;
    s.alpha = alpha;
    return s;
}
inline LayerSpec flatten() {
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    return s;
}
inline LayerSpec reshape(std::int64_t c, std::int64_t h, std::int64_t w) {
    LayerSpec s;
    s.kind = LayerKind::Reshape;
    s.reshape = {c, h, w};
    return s;
}

/// Ordered layer stack with its parameters. All randomness used to build the
/// parameters comes from rng_seed.
struct NetworkModel {
    std::vector<LayerSpec> layers;
    std::vector<std::vector<Tensor>> params;  // per layer: {} or {W, b}
    std::uint64_t rng_seed = 0;

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& lp : params)
            for (const auto& t : lp) n += t.numel();
        return n;
    }
};

using ParamGrads = std::vector<std::vector<Tensor>>;

inline ParamGrads zero_grads(const NetworkModel& m) {
    ParamGrads g(m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i)
        for (const auto& t : m.params[i]) g[i].push_back(zeros_like(t));
    return g;
}

inline void accumulate_grads(ParamGrads& into, const ParamGrads& from) {
    for (std::size_t i = 0; i < into.size(); ++i)
        for (std::size_t j = 0; j < into[i].size(); ++j)
            for (std::size_t k = 0; k < into[i][j].data.size(); ++k)
                into[i][j].data[k] += from[i][j].data[k];
}

// ---------------------------------------------------------------------------
// construction

inline NetworkModel make_network(std::vector<LayerSpec> layers, std::uint64_t seed) {
    NetworkModel m;
    m.layers = std::move(layers);
    m.rng_seed = seed;
    Rng rng(seed);
    for (const auto& l : m.layers) {
        std::vector<Tensor> p;
        switch (l.kind) {
            case LayerKind::Dense: {
                Tensor w({l.out, l.in});
                const double std = std::sqrt(2.0 / static_cast<double>(l.in + l.out));
                for (auto& v : w.data) v = std * rng.normal();
                p.push_back(std::move(w));
                p.push_back(Tensor({l.out}));
                break;
            }
            case LayerKind::Conv2d: {
                Tensor w({l.out, l.in, l.kernel, l.kernel});
                const double fan = static_cast<double>((l.in + l.out) * l.kernel * l.kernel);
                const double std = std::sqrt(2.0 / fan);
                for (auto& v : w.data) v = std * rng.normal();
                p.push_back(std::move(w));
                p.push_back(Tensor({l.out}));
                break;
            }
            case LayerKind::ConvTranspose2d: {
                Tensor w({l.in, l.out, l.kernel, l.kernel});
                const double fan = static_cast<double>((l.in + l.out) * l.kernel * l.kernel);
                const double std = std::sqrt(2.0 / fan);
                for (auto& v : w.data) v = std * rng.normal();
                p.push_back(std::move(w));
                p.push_back(Tensor({l.out}));
                break;
            }
            default:
                break;
        }
        m.params.push_back(std::move(p));
    }
    return m;
}

// ---------------------------------------------------------------------------
// im2col / col2im shared by Conv2d and ConvTranspose2d

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

/// x: {C, H, W} -> col: (C*K*K) x (Ho*Wo), zero-padded borders.
inline void im2col(const double* x, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t k,
                   std::int64_t stride, std::int64_t pad, double* col) {
    const std::int64_t ho = conv_out_extent(h, k, stride, pad);
    const std::int64_t wo = conv_out_extent(w, k, stride, pad);
    const std::int64_t cols = ho * wo;
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t ki = 0; ki < k; ++ki) {
            for (std::int64_t kj = 0; kj < k; ++kj) {
                double* row = col + ((ch * k + ki) * k + kj) * cols;
                for (std::int64_t oh = 0; oh < ho; ++oh) {
                    const std::int64_t ih = oh * stride + ki - pad;
                    for (std::int64_t ow = 0; ow < wo; ++ow) {
                        const std::int64_t iw = ow * stride + kj - pad;
                        row[oh * wo + ow] = (ih >= 0 && ih < h && iw >= 0 && iw < w)
                                                ? x[(ch * h + ih) * w + iw]
                                                : 0.0;
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatters col back into x (accumulating).
inline void col2im(const double* col, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t k,
                   std::int64_t stride, std::int64_t pad, double* x) {
    const std::int64_t ho = conv_out_extent(h, k, stride, pad);
    const std::int64_t wo = conv_out_extent(w, k, stride, pad);
    const std::int64_t cols = ho * wo;
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t ki = 0; ki < k; ++ki) {
            for (std::int64_t kj = 0; kj < k; ++kj) {
                const double* row = col + ((ch * k + ki) * k + kj) * cols;
                for (std::int64_t oh = 0; oh < ho; ++oh) {
                    const std::int64_t ih = oh * stride + ki - pad;
                    if (ih < 0 || ih >= h) continue;
                    for (std::int64_t ow = 0; ow < wo; ++ow) {
                        const std::int64_t iw = ow * stride + kj - pad;
                        if (iw < 0 || iw >= w) continue;
                        x[(ch * h + ih) * w + iw] += row[oh * wo + ow];
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// activation

inline double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}
inline double sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}
/// Smooth leaky rectifier: alpha*x + (1-alpha)*softplus(x). C-infinity, slope
/// alpha for x -> -inf and 1 for x -> +inf.
inline double slrelu(double x, double alpha) { return alpha * x + (1.0 - alpha) * softplus(x); }
inline double slrelu_grad(double x, double alpha) { return alpha + (1.0 - alpha) * sigmoid(x); }

// ---------------------------------------------------------------------------
// forward / backward

struct ForwardCache {
    std::vector<Tensor> inputs;  // input to each layer
    Tensor output;
};

namespace detail {

inline void expect(bool cond, const char* msg) {
    if (!cond) throw DomainError(msg);
}

inline Tensor layer_forward(const LayerSpec& l, const std::vector<Tensor>& p, const Tensor& x) {
    switch (l.kind) {
        case LayerKind::Dense: {
            expect(x.rank() == 2 && x.dim(1) == l.in, "dense: input shape mismatch");
            const std::int64_t b = x.dim(0);
            Tensor y({b, l.out});
            ConstMapRM xm(x.ptr(), b, l.in);
            ConstMapRM wm(p[0].ptr(), l.out, l.in);
            MapRM ym(y.ptr(), b, l.out);
            ym.noalias() = xm * wm.transpose();
            for (std::int64_t i = 0; i < b; ++i)
                for (std::int64_t j = 0; j < l.out; ++j) y.data[i * l.out + j] += p[1].data[j];
            return y;
        }
        case LayerKind::Conv2d: {
            expect(x.rank() == 4 && x.dim(1) == l.in, "conv2d: input shape mismatch");
            const std::int64_t b = x.dim(0), h = x.dim(2), w = x.dim(3);
            const std::int64_t ho = conv_out_extent(h, l.kernel, l.stride, l.pad);
            const std::int64_t wo = conv_out_extent(w, l.kernel, l.stride, l.pad);
            expect(ho > 0 && wo > 0, "conv2d: output extent not positive");
            Tensor y({b, l.out, ho, wo});
            const std::int64_t ckk = l.in * l.kernel * l.kernel;
            std::vector<double> col(static_cast<std::size_t>(ckk * ho * wo));
            ConstMapRM wm(p[0].ptr(), l.out, ckk);
            for (std::int64_t i = 0; i < b; ++i) {
                im2col(x.ptr() + i * l.in * h * w, l.in, h, w, l.kernel, l.stride, l.pad, col.data());
                ConstMapRM cm(col.data(), ckk, ho * wo);
                MapRM ym(y.ptr() + i * l.out * ho * wo, l.out, ho * wo);
                ym.noalias() = wm * cm;
                for (std::int64_t oc = 0; oc < l.out; ++oc) ym.row(oc).array() += p[1].data[oc];
            }
            return y;
        }
        case LayerKind::ConvTranspose2d: {
            expect(x.rank() == 4 && x.dim(1) == l.in, "conv_transpose2d: input shape mismatch");
            const std::int64_t b = x.dim(0), hi = x.dim(2), wi = x.dim(3);
            const std::int64_t ho = (hi - 1) * l.stride - 2 * l.pad + l.kernel;
            const std::int64_t wo = (wi - 1) * l.stride - 2 * l.pad + l.kernel;
            expect(ho > 0 && wo > 0, "conv_transpose2d: output extent not positive");
            Tensor y({b, l.out, ho, wo});
            const std::int64_t okk = l.out * l.kernel * l.kernel;
            std::vector<double> col(static_cast<std::size_t>(okk * hi * wi));
            ConstMapRM wm(p[0].ptr(), l.in, okk);
            for (std::int64_t i = 0; i < b; ++i) {
                ConstMapRM xm(x.ptr() + i * l.in * hi * wi, l.in, hi * wi);
                MapRM cm(col.data(), okk, hi * wi);
                cm.noalias() = wm.transpose() * xm;
                double* yout = y.ptr() + i * l.out * ho * wo;
                col2im(col.data(), l.out, ho, wo, l.kernel, l.stride, l.pad, yout);
                for (std::int64_t oc = 0; oc < l.out; ++oc)
                    for (std::int64_t q = 0; q < ho * wo; ++q) yout[oc * ho * wo + q] += p[1].data[oc];
            }
            return y;
        }
        case LayerKind::SmoothLeakyRelu: {
            Tensor y = x;
            for (auto& v : y.data) v = slrelu(v, l.alpha);
            return y;
        }
        case LayerKind::Flatten: {
            expect(x.rank() >= 2, "flatten: need batch dim");
            Tensor y = x;
            const std::int64_t b = x.dim(0);
            y.shape = {b, x.numel() / b};
            return y;
        }
        case LayerKind::Reshape: {
            expect(x.rank() == 2, "reshape: expected {B, N}");
            const auto [c, h, w] = l.reshape;
            expect(x.dim(1) == c * h * w, "reshape: element count mismatch");
            Tensor y = x;
            y.shape = {x.dim(0), c, h, w};
            return y;
        }
    }
    throw DomainError("layer_forward: unknown layer kind");
}

inline Tensor layer_backward(const LayerSpec& l, const std::vector<Tensor>& p, const Tensor& x,
                             const Tensor& dy, std::vector<Tensor>& grads) {
    switch (l.kind) {
        case LayerKind::Dense: {
            const std::int64_t b = x.dim(0);
            Tensor dx(x.shape);
            ConstMapRM xm(x.ptr(), b, l.in);
            ConstMapRM wm(p[0].ptr(), l.out, l.in);
            ConstMapRM dym(dy.ptr(), b, l.out);
            MapRM dxm(dx.ptr(), b, l.in);
            dxm.noalias() = dym * wm;
            MapRM dwm(grads[0].ptr(), l.out, l.in);
            dwm.noalias() += dym.transpose() * xm;
            for (std::int64_t i = 0; i < b; ++i)
                for (std::int64_t j = 0; j < l.out; ++j) grads[1].data[j] += dy.data[i * l.out + j];
            return dx;
        }
        case LayerKind::Conv2d: {
            const std::int64_t b = x.dim(0), h = x.dim(2), w = x.dim(3);
            const std::int64_t ho = dy.dim(2), wo = dy.dim(3);
            const std::int64_t ckk = l.in * l.kernel * l.kernel;
            Tensor dx(x.shape);
            std::vector<double> col(static_cast<std::size_t>(ckk * ho * wo));
            std::vector<double> dcol(col.size());
            ConstMapRM wm(p[0].ptr(), l.out, ckk);
            MapRM dwm(grads[0].ptr(), l.out, ckk);
            for (std::int64_t i = 0; i < b; ++i) {
                im2col(x.ptr() + i * l.in * h * w, l.in, h, w, l.kernel, l.stride, l.pad, col.data());
                ConstMapRM cm(col.data(), ckk, ho * wo);
                ConstMapRM dym(dy.ptr() + i * l.out * ho * wo, l.out, ho * wo);
                dwm.noalias() += dym * cm.transpose();
                for (std::int64_t oc = 0; oc < l.out; ++oc) grads[1].data[oc] += dym.row(oc).sum();
                MapRM dcm(dcol.data(), ckk, ho * wo);
                dcm.noalias() = wm.transpose() * dym;
                col2im(dcol.data(), l.in, h, w, l.kernel, l.stride, l.pad, dx.ptr() + i * l.in * h * w);
            }
            return dx;
        }
        case LayerKind::ConvTranspose2d: {
            const std::int64_t b = x.dim(0), hi = x.dim(2), wi = x.dim(3);
            const std::int64_t ho = dy.dim(2), wo = dy.dim(3);
            const std::int64_t okk = l.out * l.kernel * l.kernel;
            Tensor dx(x.shape);
            std::vector<double> dycol(static_cast<std::size_t>(okk * hi * wi));
            ConstMapRM wm(p[0].ptr(), l.in, okk);
            MapRM dwm(grads[0].ptr(), l.in, okk);
            for (std::int64_t i = 0; i < b; ++i) {
                im2col(dy.ptr() + i * l.out * ho * wo, l.out, ho, wo, l.kernel, l.stride, l.pad,
                       dycol.data());
                ConstMapRM dycm(dycol.data(), okk, hi * wi);
                ConstMapRM xm(x.ptr() + i * l.in * hi * wi, l.in, hi * wi);
                MapRM dxm(dx.ptr() + i * l.in * hi * wi, l.in, hi * wi);
                dxm.noalias() = wm * dycm;
                dwm.noalias() += xm * dycm.transpose();
                const double* dyp = dy.ptr() + i * l.out * ho * wo;
                for (std::int64_t oc = 0; oc < l.out; ++oc)
                    for (std::int64_t q = 0; q < ho * wo; ++q) grads[1].data[oc] += dyp[oc * ho * wo + q];
            }
            return dx;
        }
        case LayerKind::SmoothLeakyRelu: {
            Tensor dx = dy;
            for (std::size_t i = 0; i < dx.data.size(); ++i)
                dx.data[i] *= slrelu_grad(x.data[i], l.alpha);
            return dx;
        }
        case LayerKind::Flatten:
        case LayerKind::Reshape: {
            Tensor dx = dy;
            dx.shape = x.shape;
            return dx;
        }
    }
    throw DomainError("layer_backward: unknown layer kind");
}

}  // namespace detail

inline ForwardCache forward_cached(const NetworkModel& m, const Tensor& input) {
    ForwardCache cache;
    cache.inputs.reserve(m.layers.size());
    Tensor cur = input;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        cache.inputs.push_back(cur);
        cur = detail::layer_forward(m.layers[i], m.params[i], cache.inputs.back());
    }
    cache.output = std::move(cur);
    return cache;
}

inline Tensor forward(const NetworkModel& m, const Tensor& input) {
    Tensor cur = input;
    for (std::size_t i = 0; i < m.layers.size(); ++i)
        cur = detail::layer_forward(m.layers[i], m.params[i], cur);
    return cur;
}

struct BackwardResult {
    ParamGrads grads;
    Tensor input_grad;
};

inline BackwardResult backward(const NetworkModel& m, const ForwardCache& cache, const Tensor& output_grad) {
    if (cache.inputs.size() != m.layers.size())
        throw DomainError("backward: cache does not match model");
    if (!output_grad.same_shape(cache.output)) throw DomainError("backward: output_grad shape mismatch");
    BackwardResult r;
    r.grads = zero_grads(m);
    Tensor d = output_grad;
    for (std::size_t i = m.layers.size(); i-- > 0;)
        d = detail::layer_backward(m.layers[i], m.params[i], cache.inputs[i], d, r.grads[i]);
    r.input_grad = std::move(d);
    return r;
}

// ---------------------------------------------------------------------------
// optimizer (adaptive moment descent)

struct OptimizerState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step_count = 0;
    ParamGrads m;  // first moments
    ParamGrads v;  // second moments
};

inline OptimizerState make_adam(const NetworkModel& model, double lr = 1e-3) {
    OptimizerState s;
    s.learning_rate = lr;
    s.m = zero_grads(model);
    s.v = zero_grads(model);
    return s;
}

/// One adaptive-moment update. Rejects non-finite gradients without touching
/// the model.
inline void step(OptimizerState& opt, NetworkModel& model, const ParamGrads& grads) {
    for (const auto& lp : grads)
        for (const auto& t : lp)
            if (!t.all_finite()) throw NumericError("step: non-finite gradient");
    opt.step_count += 1;
    const double t = static_cast<double>(opt.step_count);
    const double bc1 = 1.0 - std::pow(opt.beta1, t);
    const double bc2 = 1.0 - std::pow(opt.beta2, t);
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        for (std::size_t j = 0; j < model.params[i].size(); ++j) {
            auto& p = model.params[i][j].data;
            auto& m = opt.m[i][j].data;
            auto& v = opt.v[i][j].data;
            const auto& g = grads[i][j].data;
            for (std::size_t k = 0; k < p.size(); ++k) {
                m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g[k];
                v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g[k] * g[k];
                p[k] -= opt.learning_rate * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + opt.eps);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// gradient verification

/// Central-difference check over every parameter of every listed model.
/// `loss_only` recomputes the scalar loss for the current parameter values;
/// `analytic` holds dLoss/dParam aligned with `models`. Returns the max of
/// |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
inline double grad_check(const std::vector<NetworkModel*>& models,
                         const std::vector<ParamGrads>& analytic,
                         const std::function<double()>& loss_only, double h) {
    if (h <= 0.0) throw DomainError("grad_check: h must be positive");
    double worst = 0.0;
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
        auto& model = *models[mi];
        for (std::size_t i = 0; i < model.params.size(); ++i) {
            for (std::size_t j = 0; j < model.params[i].size(); ++j) {
                auto& data = model.params[i][j].data;
                for (std::size_t k = 0; k < data.size(); ++k) {
                    const double saved = data[k];
                    data[k] = saved + h;
                    const double lp = loss_only();
                    data[k] = saved - h;
                    const double lm = loss_only();
                    data[k] = saved;
                    if (!std::isfinite(lp) || !std::isfinite(lm))
                        throw NumericError("grad_check: non-finite loss");
                    const double num = (lp - lm) / (2.0 * h);
                    const double ana = analytic[mi][i][j].data[k];
                    const double err = std::abs(ana - num) / (std::abs(ana) + std::abs(num) + 1e-12);
                    worst = std::max(worst, err);
                }
            }
        }
    }
    return worst;
}

/// Single-model convenience: loss_and_grads must evaluate the same scalar loss
/// and its parameter gradients for the model's current parameters.
inline double grad_check(NetworkModel& model,
                         const std::function<std::pair<double, ParamGrads>(const NetworkModel&)>& loss_and_grads,
                         double h) {
    auto [loss, grads] = loss_and_grads(model);
    (void)loss;
    return grad_check({&model}, {grads}, [&]() { return loss_and_grads(model).first; }, h);
}

// ---------------------------------------------------------------------------
// checkpoint IO (little-endian, 64-bit doubles; round-trips bitwise)

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_i64(std::ostream& os, std::int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw FormatError("checkpoint: truncated");
    return v;
}
inline std::int64_t read_i64(std::istream& is) {
    std::int64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw FormatError("checkpoint: truncated");
    return v;
}
inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw FormatError("checkpoint: truncated");
    return v;
}
inline double read_f64(std::istream& is) {
    double v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw FormatError("checkpoint: truncated");
    return v;
}

}  // namespace detail

inline void save_network(std::ostream& os, const NetworkModel& m) {
    detail::write_u32(os, static_cast<std::uint32_t>(m.layers.size()));
    for (const auto& l : m.layers) {
        detail::write_u32(os, static_cast<std::uint32_t>(l.kind));
        detail::write_i64(os, l.in);
        detail::write_i64(os, l.out);
        detail::write_i64(os, l.kernel);
        detail::write_i64(os, l.stride);
        detail::write_i64(os, l.pad);
        detail::write_f64(os, l.alpha);
        for (auto r : l.reshape) detail::write_i64(os, r);
    }
    detail::write_u64(os, m.rng_seed);
    for (const auto& lp : m.params) {
        detail::write_u32(os, static_cast<std::uint32_t>(lp.size()));
        for (const auto& t : lp) {
            detail::write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
            for (auto d : t.shape) detail::write_i64(os, d);
            os.write(reinterpret_cast<const char*>(t.data.data()),
                     static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        }
    }
}

inline NetworkModel load_network(std::istream& is) {
    NetworkModel m;
    const std::uint32_t n_layers = detail::read_u32(is);
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        LayerSpec l;
        l.kind = static_cast<LayerKind>(detail::read_u32(is));
        l.in = detail::read_i64(is);
        l.out = detail::read_i64(is);
        l.kernel = detail::read_i64(is);
        l.stride = detail::read_i64(is);
        l.pad = detail::read_i64(is);
        l.alpha = detail::read_f64(is);
        for (auto& r : l.reshape) r = detail::read_i64(is);
        m.layers.push_back(l);
    }
    m.rng_seed = detail::read_u64(is);
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        const std::uint32_t n_tensors = detail::read_u32(is);
        std::vector<Tensor> lp;
        for (std::uint32_t j = 0; j < n_tensors; ++j) {
            const std::uint32_t rank = detail::read_u32(is);
            std::vector<std::int64_t> shape(rank);
            for (auto& d : shape) d = detail::read_i64(is);
            Tensor t(shape);
            is.read(reinterpret_cast<char*>(t.data.data()),
                    static_cast<std::streamsize>(t.data.size() * sizeof(double)));
            if (!is) throw FormatError("checkpoint: truncated parameter block");
            lp.push_back(std::move(t));
        }
        m.params.push_back(std::move(lp));
    }
    return m;
}

}  // namespace cil::neural
