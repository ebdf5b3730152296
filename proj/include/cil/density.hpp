#pragma once

#include <fstream>
#include <span>

#include "cil/neural.hpp"

namespace cil::density {

using neural::NetworkModel;
using neural::ParamGrads;
using neural::Tensor;

/// Encoder maps the input image to (mu, log_var) of the latent posterior,
/// decoder maps a latent vector back to input shape.
struct VaeModel {
    NetworkModel encoder;
    NetworkModel decoder;
    std::int64_t latent_dim = 16;
    std::int64_t input_c = 7, input_h = 64, input_w = 16;
};

enum class Backbone { Mlp, Conv };

inline VaeModel make_vae(Backbone kind, std::int64_t c, std::int64_t h, std::int64_t w,
                         std::int64_t hidden, std::int64_t latent, std::uint64_t seed) {
    VaeModel m;
    m.latent_dim = latent;
    m.input_c = c;
    m.input_h = h;
    m.input_w = w;
    if (kind == Backbone::Mlp) {
        const std::int64_t d = c * h * w;
        m.encoder = neural::make_network(
            {neural::flatten(), neural::dense(d, hidden), neural::smooth_leaky_relu(),
             neural::dense(hidden, 2 * latent)},
            Rng::derive(seed, 1));
        m.decoder = neural::make_network(
            {neural::dense(latent, hidden), neural::smooth_leaky_relu(), neural::dense(hidden, d),
             neural::reshape(c, h, w)},
            Rng::derive(seed, 2));
    } else {
        if (h % 4 != 0 || w % 4 != 0) throw DomainError("make_vae: conv backbone needs H, W divisible by 4");
        const std::int64_t c1 = 16, c2 = 32;
        const std::int64_t flat = c2 * (h / 4) * (w / 4);
        m.encoder = neural::make_network(
            {neural::conv2d(c, c1), neural::smooth_leaky_relu(), neural::conv2d(c1, c2),
             neural::smooth_leaky_relu(), neural::flatten(), neural::dense(flat, 2 * latent)},
            Rng::derive(seed, 1));
        m.decoder = neural::make_network(
            {neural::dense(latent, flat), neural::smooth_leaky_relu(),
             neural::reshape(c2, h / 4, w / 4), neural::conv_transpose2d(c2, c1),
             neural::smooth_leaky_relu(), neural::conv_transpose2d(c1, c)},
            Rng::derive(seed, 2));
    }
    return m;
}

/// Ensures a {C,H,W} image is viewed as a batch of one.
inline Tensor as_batch(const Tensor& x) {
    if (x.rank() == 4) return x;
    if (x.rank() == 3) {
        Tensor b = x;
        b.shape = {1, x.dim(0), x.dim(1), x.dim(2)};
        return b;
    }
    throw DomainError("as_batch: expected {C,H,W} or {B,C,H,W}");
}

/// Closed-form KL(q(z|x) || N(0,I)) for a diagonal Gaussian posterior.
inline double kl_closed_form(std::span<const double> mu, std::span<const double> log_var) {
    double kl = 0.0;
    for (std::size_t j = 0; j < mu.size(); ++j)
        kl += std::exp(log_var[j]) + mu[j] * mu[j] - 1.0 - log_var[j];
    return 0.5 * kl;
}

struct VaeLossParts {
    double rmse = 0.0;
    double kl = 0.0;
};

struct VaeLossResult {
    double loss = 0.0;
    VaeLossParts parts;
    ParamGrads encoder_grads;
    ParamGrads decoder_grads;
};

/// Batch-mean loss RMSE(x, x~) + beta * KL(q || N(0,I)) with the
/// reparameterized sample z = mu + sigma * eps, eps seeded by noise_seed.
inline VaeLossResult vae_loss(const VaeModel& m, const Tensor& x_in, double beta,
                              std::uint64_t noise_seed) {
    if (beta < 0.0) throw DomainError("vae_loss: beta must be >= 0");
    const Tensor x = as_batch(x_in);
    const std::int64_t b = x.dim(0);
    const std::int64_t n = x.numel() / b;
    const std::int64_t latent = m.latent_dim;

    auto enc_cache = neural::forward_cached(m.encoder, x);
    const Tensor& stats = enc_cache.output;  // {B, 2L}: [mu | log_var]
    Rng noise(noise_seed);
    Tensor z({b, latent});
    Tensor eps({b, latent});
    for (std::int64_t i = 0; i < b; ++i) {
        for (std::int64_t j = 0; j < latent; ++j) {
            const double mu = stats.data[i * 2 * latent + j];
            const double lv = stats.data[i * 2 * latent + latent + j];
            const double e = noise.normal();
            eps.data[i * latent + j] = e;
            z.data[i * latent + j] = mu + std::exp(0.5 * lv) * e;
        }
    }
    auto dec_cache = neural::forward_cached(m.decoder, z);
    const Tensor& xt = dec_cache.output;
    if (!xt.all_finite()) throw NumericError("vae_loss: non-finite reconstruction");

    // per-sample RMSE and KL, averaged over the batch
    std::vector<double> rmse_b(b, 0.0);
    double rmse = 0.0, kl = 0.0;
    for (std::int64_t i = 0; i < b; ++i) {
        double sq = 0.0;
        for (std::int64_t k = 0; k < n; ++k) {
            const double diff = xt.data[i * n + k] - x.data[i * n + k];
            sq += diff * diff;
        }
        rmse_b[i] = std::sqrt(sq / static_cast<double>(n));
        rmse += rmse_b[i];
        kl += kl_closed_form({stats.ptr() + i * 2 * latent, static_cast<std::size_t>(latent)},
                             {stats.ptr() + i * 2 * latent + latent, static_cast<std::size_t>(latent)});
    }
    rmse /= static_cast<double>(b);
    kl /= static_cast<double>(b);

    VaeLossResult r;
    r.parts = {rmse, kl};
    r.loss = rmse + beta * kl;
    if (!std::isfinite(r.loss)) throw NumericError("vae_loss: non-finite loss");

    Tensor dxt(xt.shape);
    for (std::int64_t i = 0; i < b; ++i) {
        const double denom = static_cast<double>(b) * static_cast<double>(n) * std::max(rmse_b[i], 1e-12);
        for (std::int64_t k = 0; k < n; ++k)
            dxt.data[i * n + k] = (xt.data[i * n + k] - x.data[i * n + k]) / denom;
    }
    auto dec_back = neural::backward(m.decoder, dec_cache, dxt);

    Tensor dstats(stats.shape);
    for (std::int64_t i = 0; i < b; ++i) {
        for (std::int64_t j = 0; j < latent; ++j) {
            const double mu = stats.data[i * 2 * latent + j];
            const double lv = stats.data[i * 2 * latent + latent + j];
            const double dz = dec_back.input_grad.data[i * latent + j];
            const double e = eps.data[i * latent + j];
            dstats.data[i * 2 * latent + j] = dz + beta * mu / static_cast<double>(b);
            dstats.data[i * 2 * latent + latent + j] =
                dz * 0.5 * std::exp(0.5 * lv) * e + beta * 0.5 * (std::exp(lv) - 1.0) / static_cast<double>(b);
        }
    }
    auto enc_back = neural::backward(m.encoder, enc_cache, dstats);
    r.encoder_grads = std::move(enc_back.grads);
    r.decoder_grads = std::move(dec_back.grads);
    return r;
}

// ---------------------------------------------------------------------------
// beta schedule

/// Cyclical ramp: beta rises linearly over the first ramp_ratio of each cycle,
/// then holds at beta_max until the cycle restarts at zero.
struct BetaSchedule {
    std::int64_t cycle_len = 500;
    double ramp_ratio = 0.5;
    double beta_max = 0.4;
};

inline double beta_at(const BetaSchedule& s, std::int64_t step) {
    if (step < 0) throw DomainError("beta_at: step must be >= 0");
    if (s.cycle_len <= 0 || s.ramp_ratio <= 0.0 || s.ramp_ratio > 1.0)
        throw DomainError("beta_at: bad schedule");
    const double phase = static_cast<double>(step % s.cycle_len);
    return s.beta_max * std::min(1.0, phase / (s.ramp_ratio * static_cast<double>(s.cycle_len)));
}

// ---------------------------------------------------------------------------
// deterministic scoring and threshold calibration

/// Posterior-mean reconstruction error; no sampling, so repeated calls are
/// bitwise equal.
inline std::vector<double> recon_error_batch(const VaeModel& m, const Tensor& xs_in) {
    const Tensor xs = as_batch(xs_in);
    const std::int64_t b = xs.dim(0);
    const std::int64_t n = xs.numel() / b;
    const Tensor stats = neural::forward(m.encoder, xs);
    Tensor mu({b, m.latent_dim});
    for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t j = 0; j < m.latent_dim; ++j)
            mu.data[i * m.latent_dim + j] = stats.data[i * 2 * m.latent_dim + j];
    const Tensor xt = neural::forward(m.decoder, mu);
    std::vector<double> out(b, 0.0);
    for (std::int64_t i = 0; i < b; ++i) {
        double sq = 0.0;
        for (std::int64_t k = 0; k < n; ++k) {
            const double diff = xt.data[i * n + k] - xs.data[i * n + k];
            sq += diff * diff;
        }
        out[i] = std::sqrt(sq / static_cast<double>(n));
    }
    return out;
}

inline double recon_error(const VaeModel& m, const Tensor& x) { return recon_error_batch(m, x)[0]; }

/// Reconstruction-error cutoff standing in for the probability threshold:
/// error above e_th means low density.
struct DensityThreshold {
    double e_th = 0.0;
    double calibration_quantile = 0.95;
};

inline DensityThreshold calibrate_threshold(const VaeModel& m, const std::vector<Tensor>& held_out,
                                            double quantile) {
    if (held_out.empty()) throw DomainError("calibrate_threshold: empty calibration set");
    if (quantile < 0.0 || quantile > 1.0) throw DomainError("calibrate_threshold: quantile out of range");
    std::vector<double> errors;
    errors.reserve(held_out.size());
    for (const auto& x : held_out) errors.push_back(recon_error(m, x));
    std::sort(errors.begin(), errors.end());
    const auto n = static_cast<std::int64_t>(errors.size());
    const std::int64_t idx =
        std::clamp<std::int64_t>(static_cast<std::int64_t>(std::ceil(quantile * static_cast<double>(n))) - 1,
                                 0, n - 1);
    return DensityThreshold{errors[static_cast<std::size_t>(idx)], quantile};
}

inline bool is_low_density(const DensityThreshold& th, double error) { return error > th.e_th; }

// ---------------------------------------------------------------------------
// training

struct TrainLogRow {
    int epoch = 0;
    double rmse = 0.0;
    double kl = 0.0;
    double beta = 0.0;
};

/// Adaptive-moment training over encoded demo images; fully deterministic for
/// a fixed seed. Throws NumericError naming the epoch if the loss diverges.
inline std::vector<TrainLogRow> train_vae(VaeModel& m, const std::vector<Tensor>& images, int epochs,
                                          const BetaSchedule& schedule, double lr, int batch,
                                          std::uint64_t seed) {
    if (images.empty()) throw DomainError("train_vae: empty dataset");
    auto enc_opt = neural::make_adam(m.encoder, lr);
    auto dec_opt = neural::make_adam(m.decoder, lr);
    std::vector<TrainLogRow> log;
    std::int64_t global_step = 0;
    std::vector<std::size_t> order(images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng shuffle_rng(Rng::derive(seed, 100 + static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        double rmse_sum = 0.0, kl_sum = 0.0, beta_sum = 0.0;
        std::int64_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch));
            std::vector<const Tensor*> items;
            items.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) items.push_back(&images[order[i]]);
            const Tensor xb = neural::stack(items);
            const double beta = beta_at(schedule, global_step);
            VaeLossResult r;
            try {
                r = vae_loss(m, xb, beta, Rng::derive(seed, 1000000 + static_cast<std::uint64_t>(global_step)));
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch));
            }
            neural::step(enc_opt, m.encoder, r.encoder_grads);
            neural::step(dec_opt, m.decoder, r.decoder_grads);
            rmse_sum += r.parts.rmse;
            kl_sum += r.parts.kl;
            beta_sum += beta;
            ++steps;
            ++global_step;
        }
        log.push_back({epoch, rmse_sum / steps, kl_sum / steps, beta_sum / steps});
    }
    return log;
}

// ---------------------------------------------------------------------------
// checkpoint IO

constexpr char kCheckpointMagic[] = "CILCKPT1";

inline void save_vae(std::ostream& os, const VaeModel& m, std::uint32_t kind = 0) {
    os.write(kCheckpointMagic, 8);
    neural::detail::write_u32(os, kind);
    neural::detail::write_i64(os, m.latent_dim);
    neural::detail::write_i64(os, m.input_c);
    neural::detail::write_i64(os, m.input_h);
    neural::detail::write_i64(os, m.input_w);
    neural::save_network(os, m.encoder);
    neural::save_network(os, m.decoder);
}

inline VaeModel load_vae_body(std::istream& is) {
    VaeModel m;
    m.latent_dim = neural::detail::read_i64(is);
    m.input_c = neural::detail::read_i64(is);
    m.input_h = neural::detail::read_i64(is);
    m.input_w = neural::detail::read_i64(is);
    m.encoder = neural::load_network(is);
    m.decoder = neural::load_network(is);
    return m;
}

/// Reads the magic and kind header; kind 0 = VAE only, 1 = VAE plus
/// classifier head.
inline std::uint32_t read_checkpoint_kind(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw FormatError("checkpoint: bad magic");
    return neural::detail::read_u32(is);
}

inline void save_vae_file(const std::string& path, const VaeModel& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_vae_file: cannot open " + path);
    save_vae(os, m, 0);
    if (!os) throw IoError("save_vae_file: write failed");
}

inline VaeModel load_vae_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_vae_file: cannot open " + path);
    if (read_checkpoint_kind(is) != 0) throw FormatError("load_vae_file: checkpoint holds a constraint model");
    return load_vae_body(is);
}

}  // namespace cil::density
