#pragma once

#include "cil/density.hpp"
#include "cil/ogm.hpp"

namespace cil::constraint {

using density::VaeModel;
using neural::NetworkModel;
using neural::ParamGrads;
using neural::Tensor;

/// Constraint function g: shared VAE backbone plus a fully connected head from
/// the latent mean to a single logit. classify() > decision_threshold means
/// the state-action pair is constrained.
struct ConstraintModel {
    VaeModel backbone;
    NetworkModel head;
    double decision_threshold = 0.5;
};

enum class Label { DemoUnconstrained, PlannerConstrained };

struct LabeledExample {
    Tensor image;
    Label label = Label::DemoUnconstrained;
    std::string instance_id;
    int t = 0;
};

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Head starts as a constant classifier: final layer weights zero, bias
/// logit(bias_prior), so every input scores bias_prior at initialization.
/// head_hidden > 0 inserts one seeded hidden layer before the zeroed output.
inline ConstraintModel init_from_vae(const VaeModel& vae, double bias_prior, double decision_threshold = 0.5,
                                     std::int64_t head_hidden = 0, std::uint64_t seed = 0) {
    if (bias_prior <= 0.0 || bias_prior >= 1.0)
        throw DomainError("init_from_vae: bias_prior must be in (0,1)");
    ConstraintModel m;
    m.backbone = vae;
    m.decision_threshold = decision_threshold;
    if (head_hidden <= 0) {
        m.head = neural::make_network({neural::dense(vae.latent_dim, 1)}, Rng::derive(seed, 3));
        auto& w = m.head.params[0][0].data;
        std::fill(w.begin(), w.end(), 0.0);
        m.head.params[0][1].data[0] = logit(bias_prior);
    } else {
        m.head = neural::make_network({neural::dense(vae.latent_dim, head_hidden),
                                       neural::smooth_leaky_relu(), neural::dense(head_hidden, 1)},
                                      Rng::derive(seed, 3));
        auto& w = m.head.params[2][0].data;
        std::fill(w.begin(), w.end(), 0.0);
        m.head.params[2][1].data[0] = logit(bias_prior);
    }
    return m;
}

inline Tensor latent_mean(const VaeModel& vae, const Tensor& xb) {
    const Tensor stats = neural::forward(vae.encoder, density::as_batch(xb));
    const std::int64_t b = stats.dim(0);
    Tensor mu({b, vae.latent_dim});
    for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t j = 0; j < vae.latent_dim; ++j)
            mu.data[i * vae.latent_dim + j] = stats.data[i * 2 * vae.latent_dim + j];
    return mu;
}

inline std::vector<double> classify_batch(const ConstraintModel& m, const Tensor& xb) {
    const Tensor logits = neural::forward(m.head, latent_mean(m.backbone, xb));
    std::vector<double> out(static_cast<std::size_t>(logits.dim(0)));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = neural::sigmoid(logits.data[i]);
    return out;
}

inline double classify(const ConstraintModel& m, const Tensor& x) { return classify_batch(m, x)[0]; }

inline bool is_constrained(const ConstraintModel& m, const Tensor& x) {
    return classify(m, x) > m.decision_threshold;
}

// ---------------------------------------------------------------------------
// training loss (classifier terms over both batches, VAE auxiliary terms over
// the demonstration batch only)

struct ConstraintLossParts {
    double bce_demo = 0.0;     // -sum ln(1 - y + eps)
    double bce_planner = 0.0;  // -sum ln(y + eps)
    double rmse = 0.0;         // sum of per-example RMSE (demo only)
    double kl_term = 0.0;      // beta * sum KL (demo only)
    double kl_raw = 0.0;       // unscaled sum KL, for logging
};

struct ConstraintLossResult {
    double loss = 0.0;
    ConstraintLossParts parts;
    ParamGrads encoder_grads;
    ParamGrads decoder_grads;
    ParamGrads head_grads;
};

constexpr double kLogClamp = 1e-7;

/// Summed loss over a demo batch and a planner batch (either may be empty):
///   -sum_demo ln(1 - y + eps) - sum_planner ln(y + eps)
///   + sum_demo RMSE(x, x~) + beta * sum_demo KL(q || N(0,I)).
inline ConstraintLossResult constraint_loss(const ConstraintModel& m, const Tensor* demo_batch,
                                            const Tensor* planner_batch, double beta,
                                            std::uint64_t noise_seed) {
    const auto& enc = m.backbone.encoder;
    const auto& dec = m.backbone.decoder;
    const std::int64_t latent = m.backbone.latent_dim;
    ConstraintLossResult r;
    r.encoder_grads = neural::zero_grads(enc);
    r.decoder_grads = neural::zero_grads(dec);
    r.head_grads = neural::zero_grads(m.head);

    if (demo_batch && demo_batch->numel() > 0) {
        const Tensor xd = density::as_batch(*demo_batch);
        const std::int64_t b = xd.dim(0);
        const std::int64_t n = xd.numel() / b;
        auto enc_cache = neural::forward_cached(enc, xd);
        const Tensor& stats = enc_cache.output;
        Tensor mu({b, latent}), eps({b, latent}), z({b, latent});
        Rng noise(noise_seed);
        for (std::int64_t i = 0; i < b; ++i) {
            for (std::int64_t j = 0; j < latent; ++j) {
                const double mv = stats.data[i * 2 * latent + j];
                const double lv = stats.data[i * 2 * latent + latent + j];
                const double e = noise.normal();
                mu.data[i * latent + j] = mv;
                eps.data[i * latent + j] = e;
                z.data[i * latent + j] = mv + std::exp(0.5 * lv) * e;
                r.parts.kl_raw += 0.5 * (std::exp(lv) + mv * mv - 1.0 - lv);
            }
        }
        auto dec_cache = neural::forward_cached(dec, z);
        const Tensor& xt = dec_cache.output;
        if (!xt.all_finite()) throw NumericError("constraint_loss: non-finite reconstruction");

        auto head_cache = neural::forward_cached(m.head, mu);
        Tensor du({b, 1});
        for (std::int64_t i = 0; i < b; ++i) {
            const double y = neural::sigmoid(head_cache.output.data[i]);
            r.parts.bce_demo += -std::log(1.0 - y + kLogClamp);
            du.data[i] = y * (1.0 - y) / (1.0 - y + kLogClamp);
        }
        auto head_back = neural::backward(m.head, head_cache, du);
        neural::accumulate_grads(r.head_grads, head_back.grads);

        std::vector<double> rmse_b(b, 0.0);
        for (std::int64_t i = 0; i < b; ++i) {
            double sq = 0.0;
            for (std::int64_t k = 0; k < n; ++k) {
                const double diff = xt.data[i * n + k] - xd.data[i * n + k];
                sq += diff * diff;
            }
            rmse_b[i] = std::sqrt(sq / static_cast<double>(n));
            r.parts.rmse += rmse_b[i];
        }
        Tensor dxt(xt.shape);
        for (std::int64_t i = 0; i < b; ++i) {
            const double denom = static_cast<double>(n) * std::max(rmse_b[i], 1e-12);
            for (std::int64_t k = 0; k < n; ++k)
                dxt.data[i * n + k] = (xt.data[i * n + k] - xd.data[i * n + k]) / denom;
        }
        auto dec_back = neural::backward(dec, dec_cache, dxt);
        neural::accumulate_grads(r.decoder_grads, dec_back.grads);

        Tensor dstats(stats.shape);
        for (std::int64_t i = 0; i < b; ++i) {
            for (std::int64_t j = 0; j < latent; ++j) {
                const double mv = stats.data[i * 2 * latent + j];
                const double lv = stats.data[i * 2 * latent + latent + j];
                const double dz = dec_back.input_grad.data[i * latent + j];
                const double dmu_head = head_back.input_grad.data[i * latent + j];
                dstats.data[i * 2 * latent + j] = dz + beta * mv + dmu_head;
                dstats.data[i * 2 * latent + latent + j] =
                    dz * 0.5 * std::exp(0.5 * lv) * eps.data[i * latent + j] +
                    beta * 0.5 * (std::exp(lv) - 1.0);
            }
        }
        auto enc_back = neural::backward(enc, enc_cache, dstats);
        neural::accumulate_grads(r.encoder_grads, enc_back.grads);
    }

    if (planner_batch && planner_batch->numel() > 0) {
        const Tensor xp = density::as_batch(*planner_batch);
        const std::int64_t b = xp.dim(0);
        auto enc_cache = neural::forward_cached(enc, xp);
        const Tensor& stats = enc_cache.output;
        Tensor mu({b, latent});
        for (std::int64_t i = 0; i < b; ++i)
            for (std::int64_t j = 0; j < latent; ++j)
                mu.data[i * latent + j] = stats.data[i * 2 * latent + j];
        auto head_cache = neural::forward_cached(m.head, mu);
        Tensor du({b, 1});
        for (std::int64_t i = 0; i < b; ++i) {
            const double y = neural::sigmoid(head_cache.output.data[i]);
            r.parts.bce_planner += -std::log(y + kLogClamp);
            du.data[i] = -y * (1.0 - y) / (y + kLogClamp);
        }
        auto head_back = neural::backward(m.head, head_cache, du);
        neural::accumulate_grads(r.head_grads, head_back.grads);
        Tensor dstats(stats.shape);
        for (std::int64_t i = 0; i < b; ++i)
            for (std::int64_t j = 0; j < latent; ++j)
                dstats.data[i * 2 * latent + j] = head_back.input_grad.data[i * latent + j];
        auto enc_back = neural::backward(enc, enc_cache, dstats);
        neural::accumulate_grads(r.encoder_grads, enc_back.grads);
    }

    r.parts.kl_term = beta * r.parts.kl_raw;
    r.loss = r.parts.bce_demo + r.parts.bce_planner + r.parts.rmse + r.parts.kl_term;
    if (!std::isfinite(r.loss)) throw NumericError("constraint_loss: non-finite loss");
    return r;
}

// ---------------------------------------------------------------------------
// drivable-region rendering (constraint response over candidate ego offsets)

/// Candidate ego displacements relative to the anchor, row-major over
/// (longitudinal, lateral).
struct OffsetGrid {
    double s_min = -16.0, s_max = 16.0;
    double d_min = -8.0, d_max = 8.0;
    int rows = 32, cols = 16;
};

struct DrivableMask {
    int rows = 0, cols = 0;
    std::vector<std::uint8_t> unconstrained;  // row-major, 1 = drivable
    double fraction_unconstrained() const {
        if (unconstrained.empty()) return 0.0;
        double f = 0.0;
        for (auto v : unconstrained) f += v;
        return f / static_cast<double>(unconstrained.size());
    }
};

/// Evaluates the constraint for the fixed scene context with the ego action
/// synthesized as a constant-velocity window at each offset.
inline DrivableMask drivable_region(const ConstraintModel& m,
                                    std::span<const scene::VehicleState> neighbors,
                                    const scene::RoadSpec& road, const scene::VehicleState& anchor,
                                    const ogm::GridSpec& grid, const OffsetGrid& offsets,
                                    double window_s = 1.0, double dt = 0.1) {
    const Tensor state = ogm::encode_state(neighbors, road, anchor, grid);
    const int w_steps = std::max(1, static_cast<int>(std::llround(window_s / dt)));
    DrivableMask mask;
    mask.rows = offsets.rows;
    mask.cols = offsets.cols;
    mask.unconstrained.assign(static_cast<std::size_t>(offsets.rows) * offsets.cols, 0);

    std::vector<Tensor> images;
    images.reserve(mask.unconstrained.size());
    for (int r = 0; r < offsets.rows; ++r) {
        const double ds = offsets.rows > 1
                              ? offsets.s_min + (offsets.s_max - offsets.s_min) * r / (offsets.rows - 1)
                              : offsets.s_min;
        for (int c = 0; c < offsets.cols; ++c) {
            const double dd = offsets.cols > 1
                                  ? offsets.d_min + (offsets.d_max - offsets.d_min) * c / (offsets.cols - 1)
                                  : offsets.d_min;
            std::vector<scene::Pose> window(static_cast<std::size_t>(w_steps) + 1);
            std::vector<std::array<double, 2>> wvel(window.size(), {anchor.v_s, anchor.v_d});
            for (int j = 0; j <= w_steps; ++j)
                window[static_cast<std::size_t>(j)] = {anchor.s + ds + anchor.v_s * j * dt,
                                                       anchor.d + dd + anchor.v_d * j * dt, j * dt};
            Tensor action = ogm::encode_action(window, wvel, anchor, anchor.length, anchor.width, grid);
            images.push_back(ogm::concat_state_action(state, action));
        }
    }
    std::vector<const Tensor*> ptrs;
    ptrs.reserve(images.size());
    for (const auto& t : images) ptrs.push_back(&t);
    const auto probs = classify_batch(m, neural::stack(ptrs));
    for (std::size_t i = 0; i < probs.size(); ++i)
        mask.unconstrained[i] = probs[i] > m.decision_threshold ? 0 : 1;
    return mask;
}

inline void render_mask_pgm(const DrivableMask& mask, const std::string& path_stem) {
    Tensor t({1, mask.rows, mask.cols});
    for (std::size_t i = 0; i < mask.unconstrained.size(); ++i) t.data[i] = mask.unconstrained[i];
    ogm::render_pgm(t, path_stem);
}

// ---------------------------------------------------------------------------
// checkpoint IO (kind 1 = VAE backbone + head)

inline void save_constraint_file(const std::string& path, const ConstraintModel& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_constraint_file: cannot open " + path);
    density::save_vae(os, m.backbone, 1);
    neural::save_network(os, m.head);
    neural::detail::write_f64(os, m.decision_threshold);
    if (!os) throw IoError("save_constraint_file: write failed");
}

inline ConstraintModel load_constraint_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_constraint_file: cannot open " + path);
    if (density::read_checkpoint_kind(is) != 1)
        throw FormatError("load_constraint_file: checkpoint holds a plain VAE");
    ConstraintModel m;
    m.backbone = density::load_vae_body(is);
    m.head = neural::load_network(is);
    m.decision_threshold = neural::detail::read_f64(is);
    return m;
}

}  // namespace cil::constraint
