#pragma once

#include "cil/dataset.hpp"
#include "cil/ogm.hpp"

namespace cil::pairing {

using neural::Tensor;

/// A training example is (state at t, ego action window [t, t+T_a]) anchored
/// at the ego pose at t. An instance of T_steps poses yields
/// T_steps - T_a/dt examples.
struct PairingSpec {
    double action_window_s = 1.0;
};

inline int window_steps(const PairingSpec& spec, double dt) {
    const int w = static_cast<int>(std::llround(spec.action_window_s / dt));
    if (w < 1) throw DomainError("pairing: action window shorter than one step");
    return w;
}

inline int examples_per_instance(const dataset::DemonstrationInstance& inst, const PairingSpec& spec) {
    const int w = window_steps(spec, inst.dt);
    return std::max(0, static_cast<int>(inst.t_steps()) - w);
}

/// State-action image for a demonstration timestep. Ego velocities come from
/// differencing the full track once (pass them in to avoid recomputation).
inline Tensor demo_window_image(const dataset::DemonstrationInstance& inst,
                                const dataset::ReplayWorld& world,
                                std::span<const std::array<double, 2>> ego_vel, int t,
                                const ogm::GridSpec& grid, int w_steps) {
    const auto& track = inst.ego_track;
    if (t < 0 || t + w_steps >= static_cast<int>(track.size()))
        throw DomainError("demo_window_image: window exceeds track");
    scene::VehicleState anchor;
    anchor.s = track[t].s;
    anchor.d = track[t].d;
    anchor.v_s = ego_vel[t][0];
    anchor.v_d = ego_vel[t][1];
    anchor.length = inst.ego_length;
    anchor.width = inst.ego_width;
    anchor.lane_id = scene::lane_of(inst.road, anchor.d);
    const auto& frame = dataset::replay_step(world, t);
    Tensor state = ogm::encode_state(frame, inst.road, anchor, grid);
    std::span<const scene::Pose> window(track.data() + t, static_cast<std::size_t>(w_steps) + 1);
    std::span<const std::array<double, 2>> wvel(ego_vel.data() + t, static_cast<std::size_t>(w_steps) + 1);
    Tensor action = ogm::encode_action(window, wvel, anchor, inst.ego_length, inst.ego_width, grid);
    return ogm::concat_state_action(state, action);
}

/// All per-timestep images of one instance.
inline std::vector<Tensor> demo_windows(const dataset::DemonstrationInstance& inst,
                                        const ogm::GridSpec& grid, const PairingSpec& spec) {
    const int w = window_steps(spec, inst.dt);
    const auto world = dataset::make_replay(inst);
    const auto vel = scene::track_velocities(inst.ego_track);
    std::vector<Tensor> out;
    const int n = examples_per_instance(inst, spec);
    out.reserve(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) out.push_back(demo_window_image(inst, world, vel, t, grid, w));
    return out;
}

}  // namespace cil::pairing
