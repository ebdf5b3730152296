#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "cil/common.hpp"

namespace cil::scene {

/// Road-frame vehicle state: s runs along the road, d is the lateral offset
/// from the right road edge. Footprint is an axis-aligned rectangle in (s, d).
struct VehicleState {
    double s = 0.0;        // m, longitudinal
    double d = 0.0;        // m, lateral
    double v_s = 0.0;      // m/s
    double v_d = 0.0;      // m/s
    double length = 4.5;   // m
    double width = 1.8;    // m
    int lane_id = 0;
};

/// Straight multi-lane road. Lateral bounds are [0, lane_count * lane_width].
struct RoadSpec {
    int lane_count = 3;
    double lane_width = 3.7;   // m
    double length = 2000.0;    // m
    double speed_limit = 14.0; // m/s
};

/// A point on a trajectory, time-stamped relative to the trajectory anchor.
struct Pose {
    double s = 0.0;
    double d = 0.0;
    double t = 0.0;
};

inline double road_width(const RoadSpec& road) { return road.lane_count * road.lane_width; }

inline double lane_center(const RoadSpec& road, int lane_id) {
    if (lane_id < 0 || lane_id >= road.lane_count)
        throw DomainError("lane_center: lane_id " + std::to_string(lane_id) + " out of range");
    return (lane_id + 0.5) * road.lane_width;
}

/// Lane containing lateral offset d, clamped to valid lanes. Boundaries belong
/// to the upper lane (floor semantics).
inline int lane_of(const RoadSpec& road, double d) {
    const int k = static_cast<int>(std::floor(d / road.lane_width));
    return std::clamp(k, 0, road.lane_count - 1);
}

/// True iff the two footprints intersect with positive area; touching edges do
/// not count as overlap.
inline bool rect_overlap(const VehicleState& a, const VehicleState& b) {
    return std::abs(a.s - b.s) < 0.5 * (a.length + b.length) &&
           std::abs(a.d - b.d) < 0.5 * (a.width + b.width);
}

/// Same footprint test with explicit positions (used when rolling a pose
/// sequence against recorded states).
inline bool rect_overlap_at(double as, double ad, double alen, double awid, const VehicleState& b) {
    return std::abs(as - b.s) < 0.5 * (alen + b.length) && std::abs(ad - b.d) < 0.5 * (awid + b.width);
}

/// Per-pose (v_s, v_d) estimates from a uniformly sampled track. Central
/// differences in the interior, second-order one-sided at the ends; exact for
/// constant-acceleration tracks.
inline std::vector<std::array<double, 2>> track_velocities(std::span<const Pose> poses) {
    const std::size_t n = poses.size();
    std::vector<std::array<double, 2>> v(n, {0.0, 0.0});
    if (n < 2) return v;
    const double dt = poses[1].t - poses[0].t;
    if (dt <= 0.0) throw DomainError("track_velocities: poses must be strictly time-ordered");
    if (n == 2) {
        v[0] = v[1] = {(poses[1].s - poses[0].s) / dt, (poses[1].d - poses[0].d) / dt};
        return v;
    }
    // difference-first forms keep a constant track at exactly zero velocity
    v[0] = {(4.0 * (poses[1].s - poses[0].s) - (poses[2].s - poses[0].s)) / (2.0 * dt),
            (4.0 * (poses[1].d - poses[0].d) - (poses[2].d - poses[0].d)) / (2.0 * dt)};
    for (std::size_t j = 1; j + 1 < n; ++j)
        v[j] = {(poses[j + 1].s - poses[j - 1].s) / (2.0 * dt),
                (poses[j + 1].d - poses[j - 1].d) / (2.0 * dt)};
    v[n - 1] = {(3.0 * (poses[n - 1].s - poses[n - 2].s) - (poses[n - 2].s - poses[n - 3].s)) / (2.0 * dt),
                (3.0 * (poses[n - 1].d - poses[n - 2].d) - (poses[n - 2].d - poses[n - 3].d)) / (2.0 * dt)};
    return v;
}

/// VehicleState of the ego at a track index, with differenced velocities.
inline VehicleState ego_state_at(std::span<const Pose> track, std::size_t t, double length, double width,
                                 const RoadSpec& road) {
    if (t >= track.size()) throw DomainError("ego_state_at: index out of range");
    const auto vel = track_velocities(track);
    VehicleState st;
    st.s = track[t].s;
    st.d = track[t].d;
    st.v_s = vel[t][0];
    st.v_d = vel[t][1];
    st.length = length;
    st.width = width;
    st.lane_id = lane_of(road, st.d);
    return st;
}

}  // namespace cil::scene
