#pragma once

#include "cil/planner.hpp"

namespace cil::inference {

using neural::Tensor;

struct InferenceConfig {
    int max_epochs = 8;
    int planner_batch = 64;      // instances labeled per epoch
    int steps_per_epoch = 200;   // gradient steps per epoch
    double convergence_new_constrained_frac = 0.02;
    std::uint64_t seed = 1;
    int train_batch = 32;
    double learning_rate = 1e-3;
    density::BetaSchedule beta_schedule{500, 0.5, 0.4};
    double bias_prior = 0.1;
    double decision_threshold = 0.5;
    std::int64_t head_hidden = 0;
    bool freeze_backbone = false;
    int threads = 1;
    double gt_gap = 0.0;  // ground-truth minimum gap when known (synthetic); 0 disables the diagnostic
};

struct EpochReport {
    int epoch = 0;
    std::int64_t planner_pairs_total = 0;
    std::int64_t labeled_constrained = 0;
    std::int64_t no_solution_count = 0;
    double mean_bce_demo = 0.0;
    double mean_bce_planner = 0.0;
    double mean_rmse = 0.0;
    double mean_kl = 0.0;
    double new_constrained_frac = 0.0;
    double gt_violation_frac = -1.0;  // -1 when no ground truth configured
    bool converged = false;
    bool aborted = false;
};

struct LabelResult {
    std::vector<Tensor> demo_images;
    std::vector<Tensor> planner_images;  // the low-density chosen-trajectory pairs
    std::int64_t planner_pairs_total = 0;
    std::int64_t no_solution_count = 0;
    std::int64_t gt_violations = 0;
    std::int64_t gt_checked = 0;
};

namespace detail {

/// Does the chosen trajectory ever close below gap G on its same-lane leader?
inline bool violates_gap(const dataset::DemonstrationInstance& inst,
                         const planner::CandidateTrajectory& c, double gap) {
    const auto world = dataset::make_replay(inst);
    const std::size_t n = std::min(c.poses.size(), inst.t_steps());
    for (std::size_t k = 0; k < n; ++k) {
        const auto& pose = c.poses[k];
        const int lane = scene::lane_of(inst.road, pose.d);
        const auto& frame = dataset::replay_step(world, static_cast<std::int64_t>(k));
        const scene::VehicleState* leader = nullptr;
        for (const auto& nb : frame) {
            if (nb.s <= pose.s || scene::lane_of(inst.road, nb.d) != lane) continue;
            if (!leader || nb.s < leader->s) leader = &nb;
        }
        if (!leader) continue;
        const double g = (leader->s - 0.5 * leader->length) - (pose.s + 0.5 * inst.ego_length);
        if (g < gap) return true;
    }
    return false;
}

}  // namespace detail

/// One labeling pass: plans every instance with the current constraint model,
/// tags all demonstration pairs unconstrained, and tags chosen-trajectory
/// pairs constrained when their reconstruction error exceeds the calibrated
/// threshold. Remaining planner pairs are dropped.
inline LabelResult label_epoch(std::span<const dataset::DemonstrationInstance> instances,
                               const constraint::ConstraintModel& model, const density::VaeModel& vae,
                               const density::DensityThreshold& threshold,
                               const planner::SamplingSpec& sampling, const ogm::GridSpec& grid,
                               const pairing::PairingSpec& pair_spec, double gt_gap, int threads) {
    struct PerInstance {
        std::vector<Tensor> demo;
        std::vector<Tensor> planner_constrained;
        std::int64_t pairs_total = 0;
        bool no_solution = false;
        int gt_violation = -1;
    };
    const std::function<PerInstance(std::size_t)> work = [&](std::size_t idx) {
        const auto& inst = instances[idx];
        PerInstance out;
        out.demo = pairing::demo_windows(inst, grid, pair_spec);
        const auto result = planner::plan(inst, &model, sampling, grid, pair_spec);
        if (result.no_solution()) {
            out.no_solution = true;
            return out;
        }
        const auto& chosen = result.chosen();
        if (gt_gap > 0.0) out.gt_violation = detail::violates_gap(inst, chosen, gt_gap) ? 1 : 0;
        const auto world = dataset::make_replay(inst);
        const int w_steps = pairing::window_steps(pair_spec, sampling.dt);
        const int n_eval =
            std::min<int>(sampling.horizon_steps() - w_steps + 1, static_cast<int>(inst.t_steps()));
        std::vector<Tensor> windows;
        windows.reserve(static_cast<std::size_t>(n_eval));
        for (int t = 0; t < n_eval; ++t)
            windows.push_back(planner::candidate_window_image(inst, world, chosen, t, w_steps, grid));
        out.pairs_total = static_cast<std::int64_t>(windows.size());
        std::vector<const Tensor*> ptrs;
        ptrs.reserve(windows.size());
        for (const auto& w : windows) ptrs.push_back(&w);
        const auto errors = density::recon_error_batch(vae, neural::stack(ptrs));
        for (std::size_t i = 0; i < windows.size(); ++i)
            if (density::is_low_density(threshold, errors[i]))
                out.planner_constrained.push_back(std::move(windows[i]));
        return out;
    };
    const auto per_instance = parallel_map<PerInstance>(instances.size(), threads, work);

    LabelResult r;
    for (auto& pi : per_instance) {
        for (auto& img : pi.demo) r.demo_images.push_back(std::move(img));
        for (auto& img : pi.planner_constrained) r.planner_images.push_back(std::move(img));
        r.planner_pairs_total += pi.pairs_total;
        if (pi.no_solution) ++r.no_solution_count;
        if (pi.gt_violation >= 0) {
            ++r.gt_checked;
            r.gt_violations += pi.gt_violation;
        }
    }
    return r;
}

using EpochCallback = std::function<void(const EpochReport&, const constraint::ConstraintModel&)>;

/// The outer inference loop: label with the current g, retrain g on the
/// labeled pairs, stop when the newly constrained fraction falls below the
/// convergence threshold or max_epochs is reached.
inline std::pair<constraint::ConstraintModel, std::vector<EpochReport>> run_inference(
    const std::vector<dataset::DemonstrationInstance>& train_instances, const density::VaeModel& vae,
    const density::DensityThreshold& threshold, const InferenceConfig& cfg,
    const planner::SamplingSpec& sampling, const ogm::GridSpec& grid,
    const pairing::PairingSpec& pair_spec, const EpochCallback& on_epoch = {}) {
    if (train_instances.empty()) throw DomainError("run_inference: empty training set");
    if (cfg.max_epochs < 1) throw DomainError("run_inference: max_epochs must be >= 1");

    auto model = constraint::init_from_vae(vae, cfg.bias_prior, cfg.decision_threshold,
                                           cfg.head_hidden, cfg.seed);
    auto enc_opt = neural::make_adam(model.backbone.encoder, cfg.learning_rate);
    auto dec_opt = neural::make_adam(model.backbone.decoder, cfg.learning_rate);
    auto head_opt = neural::make_adam(model.head, cfg.learning_rate);

    std::vector<EpochReport> reports;
    std::vector<std::size_t> index(train_instances.size());
    for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;
    std::int64_t global_step = 0;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        Rng pick(Rng::derive(cfg.seed, 200 + static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = index.size(); i > 1; --i) std::swap(index[i - 1], index[pick.below(i)]);
        const std::size_t batch_n =
            std::min<std::size_t>(index.size(), static_cast<std::size_t>(cfg.planner_batch));
        std::vector<dataset::DemonstrationInstance> batch;
        batch.reserve(batch_n);
        for (std::size_t i = 0; i < batch_n; ++i) batch.push_back(train_instances[index[i]]);

        const auto labels = label_epoch(batch, model, vae, threshold, sampling, grid, pair_spec,
                                        cfg.gt_gap, cfg.threads);

        EpochReport rep;
        rep.epoch = epoch;
        rep.planner_pairs_total = labels.planner_pairs_total;
        rep.labeled_constrained = static_cast<std::int64_t>(labels.planner_images.size());
        rep.no_solution_count = labels.no_solution_count;
        rep.new_constrained_frac =
            labels.planner_pairs_total > 0
                ? static_cast<double>(rep.labeled_constrained) / static_cast<double>(labels.planner_pairs_total)
                : 0.0;
        if (labels.gt_checked > 0)
            rep.gt_violation_frac =
                static_cast<double>(labels.gt_violations) / static_cast<double>(labels.gt_checked);

        const auto snapshot = model;
        const auto enc_snap = enc_opt;
        const auto dec_snap = dec_opt;
        const auto head_snap = head_opt;
        try {
            Rng sample_rng(Rng::derive(cfg.seed, 300 + static_cast<std::uint64_t>(epoch)));
            double sum_bd = 0, sum_bp = 0, sum_rmse = 0, sum_kl = 0;
            for (int step_i = 0; step_i < cfg.steps_per_epoch; ++step_i) {
                const bool have_planner = !labels.planner_images.empty();
                const int nd = have_planner ? std::max(1, cfg.train_batch / 2) : cfg.train_batch;
                const int np = have_planner ? cfg.train_batch - nd : 0;
                std::vector<const Tensor*> demo_ptrs;
                demo_ptrs.reserve(static_cast<std::size_t>(nd));
                for (int i = 0; i < nd; ++i)
                    demo_ptrs.push_back(&labels.demo_images[sample_rng.below(labels.demo_images.size())]);
                const Tensor demo = neural::stack(demo_ptrs);
                Tensor planner_batch_t;
                if (np > 0) {
                    std::vector<const Tensor*> ptrs;
                    ptrs.reserve(static_cast<std::size_t>(np));
                    for (int i = 0; i < np; ++i)
                        ptrs.push_back(&labels.planner_images[sample_rng.below(labels.planner_images.size())]);
                    planner_batch_t = neural::stack(ptrs);
                }
                const double beta = density::beta_at(cfg.beta_schedule, global_step);
                const auto res = constraint::constraint_loss(
                    model, &demo, np > 0 ? &planner_batch_t : nullptr, beta,
                    Rng::derive(cfg.seed, 5000000 + static_cast<std::uint64_t>(global_step)));
                if (!cfg.freeze_backbone) {
                    neural::step(enc_opt, model.backbone.encoder, res.encoder_grads);
                    neural::step(dec_opt, model.backbone.decoder, res.decoder_grads);
                }
                neural::step(head_opt, model.head, res.head_grads);
                sum_bd += res.parts.bce_demo;
                sum_bp += res.parts.bce_planner;
                sum_rmse += res.parts.rmse;
                sum_kl += res.parts.kl_raw;
                ++global_step;
            }
            const double steps = std::max(1, cfg.steps_per_epoch);
            rep.mean_bce_demo = sum_bd / steps;
            rep.mean_bce_planner = sum_bp / steps;
            rep.mean_rmse = sum_rmse / steps;
            rep.mean_kl = sum_kl / steps;
        } catch (const NumericError&) {
            model = snapshot;
            enc_opt = enc_snap;
            dec_opt = dec_snap;
            head_opt = head_snap;
            rep.aborted = true;
            reports.push_back(rep);
            if (on_epoch) on_epoch(rep, model);
            break;
        }

        rep.converged = rep.new_constrained_frac < cfg.convergence_new_constrained_frac;
        reports.push_back(rep);
        if (on_epoch) on_epoch(rep, model);
        if (rep.converged) break;
    }
    return {std::move(model), std::move(reports)};
}

inline void write_reports_csv(const std::vector<EpochReport>& reports, std::ostream& os) {
    os << "epoch,planner_pairs_total,labeled_constrained,no_solution_count,new_constrained_frac,"
          "mean_bce_demo,mean_bce_planner,mean_rmse,mean_kl,gt_violation_frac,converged,aborted\n";
    for (const auto& r : reports) {
        os << r.epoch << ',' << r.planner_pairs_total << ',' << r.labeled_constrained << ','
           << r.no_solution_count << ',' << format_double(r.new_constrained_frac) << ','
           << format_double(r.mean_bce_demo) << ',' << format_double(r.mean_bce_planner) << ','
           << format_double(r.mean_rmse) << ',' << format_double(r.mean_kl) << ','
           << format_double(r.gt_violation_frac) << ',' << (r.converged ? 1 : 0) << ','
           << (r.aborted ? 1 : 0) << '\n';
    }
}

}  // namespace cil::inference
