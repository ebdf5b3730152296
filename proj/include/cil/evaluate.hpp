#pragma once

#include <filesystem>
#include <memory>

#include "cil/inference.hpp"

namespace cil::evaluate {

using neural::Tensor;

/// Table-I-shaped summary. NoSolution instances are excluded from the
/// collision / out-of-road denominators (they produce no trajectory to score).
struct EvalReport {
    std::int64_t n_instances = 0;
    std::int64_t no_solution_count = 0;
    std::int64_t collision_count = 0;
    std::int64_t out_of_road_count = 0;
    double collision_pct = 0.0;
    double out_of_road_pct = 0.0;
    double no_solution_pct = 0.0;
    std::shared_ptr<EvalReport> baseline;  // unconstrained planner on the same instances
};

namespace detail {

struct Outcome {
    bool no_solution = false;
    bool collision = false;
    bool out_of_road = false;
};

inline Outcome roll_instance(const dataset::DemonstrationInstance& inst,
                             const constraint::ConstraintModel* model,
                             const planner::SamplingSpec& sampling, const ogm::GridSpec& grid,
                             const pairing::PairingSpec& pair_spec) {
    Outcome out;
    const auto result = planner::plan(inst, model, sampling, grid, pair_spec);
    if (result.no_solution()) {
        out.no_solution = true;
        return out;
    }
    const auto& chosen = result.chosen();
    const auto world = dataset::make_replay(inst);
    const double half_w = 0.5 * inst.ego_width;
    const double road_hi = scene::road_width(inst.road);
    const std::size_t n = std::min(chosen.poses.size(), inst.t_steps());
    for (std::size_t k = 0; k < n; ++k) {
        const auto& pose = chosen.poses[k];
        for (const auto& nb : dataset::replay_step(world, static_cast<std::int64_t>(k))) {
            if (scene::rect_overlap_at(pose.s, pose.d, inst.ego_length, inst.ego_width, nb)) {
                out.collision = true;
                break;
            }
        }
        if (pose.d - half_w < 0.0 || pose.d + half_w > road_hi) out.out_of_road = true;
        if (out.collision && out.out_of_road) break;
    }
    return out;
}

}  // namespace detail

/// Single-horizon evaluation: plan each instance once and roll the chosen
/// trajectory against the replayed neighbors. Instances must not come from
/// the training split.
inline EvalReport evaluate(std::span<const dataset::DemonstrationInstance> instances,
                           const constraint::ConstraintModel* model,
                           const planner::SamplingSpec& sampling, const ogm::GridSpec& grid,
                           const pairing::PairingSpec& pair_spec = {}, int threads = 1) {
    for (const auto& inst : instances)
        if (inst.split == dataset::Split::Train)
            throw DomainError("evaluate: instance " + inst.id + " is tagged train");
    const std::function<detail::Outcome(std::size_t)> work = [&](std::size_t i) {
        return detail::roll_instance(instances[i], model, sampling, grid, pair_spec);
    };
    const auto outcomes = parallel_map<detail::Outcome>(instances.size(), threads, work);
    EvalReport r;
    r.n_instances = static_cast<std::int64_t>(instances.size());
    for (const auto& o : outcomes) {
        if (o.no_solution) {
            ++r.no_solution_count;
            continue;
        }
        if (o.collision) ++r.collision_count;
        if (o.out_of_road) ++r.out_of_road_count;
    }
    const std::int64_t scored = r.n_instances - r.no_solution_count;
    r.collision_pct = scored > 0 ? 100.0 * r.collision_count / scored : 0.0;
    r.out_of_road_pct = scored > 0 ? 100.0 * r.out_of_road_count / scored : 0.0;
    r.no_solution_pct = r.n_instances > 0 ? 100.0 * r.no_solution_count / r.n_instances : 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// Fig.-2-style perturbation study

struct PerturbationResult {
    double mean_error_in = 0.0;
    double mean_error_perturbed = 0.0;
    std::int64_t used = 0;
    std::int64_t skipped = 0;  // demos without a leader
};

/// For each demo, translate the full ego track forward so the bumper gap to
/// the nearest same-lane leader becomes `shift` meters (only when the current
/// gap exceeds shift), then compare reconstruction errors of the t=0 windows.
inline PerturbationResult perturbation_study(const density::VaeModel& vae,
                                             std::span<const dataset::DemonstrationInstance> demos,
                                             double shift, const ogm::GridSpec& grid,
                                             const pairing::PairingSpec& pair_spec = {}) {
    PerturbationResult r;
    double sum_in = 0.0, sum_pert = 0.0;
    for (const auto& inst : demos) {
        const auto& ego0 = inst.ego_track.front();
        const int lane = scene::lane_of(inst.road, ego0.d);
        const scene::VehicleState* leader = nullptr;
        for (const auto& nb : inst.neighbors) {
            const auto& st = nb.states.front();
            if (st.s <= ego0.s || scene::lane_of(inst.road, st.d) != lane) continue;
            if (!leader || st.s < leader->s) leader = &st;
        }
        if (!leader) {
            ++r.skipped;
            continue;
        }
        const int w_steps = pairing::window_steps(pair_spec, inst.dt);
        const auto world = dataset::make_replay(inst);
        const auto vel = scene::track_velocities(inst.ego_track);
        const Tensor in_img = pairing::demo_window_image(inst, world, vel, 0, grid, w_steps);

        const double gap_now =
            (leader->s - 0.5 * leader->length) - (ego0.s + 0.5 * inst.ego_length);
        dataset::DemonstrationInstance shifted = inst;
        if (gap_now > shift) {
            const double delta = gap_now - shift;
            for (auto& p : shifted.ego_track) p.s += delta;
        }
        const auto world_s = dataset::make_replay(shifted);
        const auto vel_s = scene::track_velocities(shifted.ego_track);
        const Tensor pert_img = pairing::demo_window_image(shifted, world_s, vel_s, 0, grid, w_steps);

        sum_in += density::recon_error(vae, in_img);
        sum_pert += density::recon_error(vae, pert_img);
        ++r.used;
    }
    if (r.used > 0) {
        sum_in /= static_cast<double>(r.used);
        sum_pert /= static_cast<double>(r.used);
    }
    r.mean_error_in = sum_in;
    r.mean_error_perturbed = sum_pert;
    return r;
}

// ---------------------------------------------------------------------------
// report rendering

/// Writes the aligned-text table plus a machine-readable CSV; deterministic
/// bytes for a given report.
inline void render_report(const EvalReport& report, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    {
        std::ofstream os(out_dir + "/eval_report.txt");
        if (!os) throw IoError("render_report: cannot open eval_report.txt");
        char line[256];
        os << "Collision % | Out of road % | No MoP solution %\n";
        std::snprintf(line, sizeof(line), "%11.2f | %13.2f | %17.2f\n", report.collision_pct,
                      report.out_of_road_pct, report.no_solution_pct);
        os << line;
        if (report.baseline) {
            const auto& b = *report.baseline;
            std::snprintf(line, sizeof(line), "%11.2f | %13.2f | %17.2f  (unconstrained baseline)\n",
                          b.collision_pct, b.out_of_road_pct, b.no_solution_pct);
            os << line;
            std::snprintf(line, sizeof(line), "%+11.2f | %+13.2f | %+17.2f  (delta vs baseline)\n",
                          report.collision_pct - b.collision_pct,
                          report.out_of_road_pct - b.out_of_road_pct,
                          report.no_solution_pct - b.no_solution_pct);
            os << line;
        }
        if (!os) throw IoError("render_report: write failed");
    }
    {
        std::ofstream os(out_dir + "/eval_report.csv");
        if (!os) throw IoError("render_report: cannot open eval_report.csv");
        os << "row,collision_pct,out_of_road_pct,no_solution_pct,n_instances,collision_count,"
              "out_of_road_count,no_solution_count\n";
        const auto emit = [&os](const char* name, const EvalReport& r) {
            os << name << ',' << format_double(r.collision_pct) << ','
               << format_double(r.out_of_road_pct) << ',' << format_double(r.no_solution_pct) << ','
               << r.n_instances << ',' << r.collision_count << ',' << r.out_of_road_count << ','
               << r.no_solution_count << '\n';
        };
        emit("constrained", report);
        if (report.baseline) emit("baseline", *report.baseline);
        if (!os) throw IoError("render_report: write failed");
    }
}

}  // namespace cil::evaluate
