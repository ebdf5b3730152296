#pragma once

#include <Eigen/Dense>

#include "cil/constraint.hpp"
#include "cil/pairing.hpp"

namespace cil::planner {

using neural::Tensor;

/// Candidate grid: lateral_count evenly spaced lateral targets times
/// speed_count evenly spaced terminal speeds.
struct SamplingSpec {
    int lateral_count = 7;
    int speed_count = 13;
    double speed_min = 0.0;
    double speed_max = 24.0;
    double horizon = 5.0;  // s
    double dt = 0.1;       // s

    int horizon_steps() const { return static_cast<int>(std::llround(horizon / dt)); }
};

/// One sampled trajectory: quintic lateral profile, cubic speed profile,
/// poses and analytic velocity/jerk sampled at dt over [0, horizon].
struct CandidateTrajectory {
    double target_lateral = 0.0;
    double target_speed = 0.0;
    std::vector<scene::Pose> poses;
    std::vector<double> v_s, v_d;
    std::vector<std::array<double, 2>> jerk_profile;  // (lat, lon) per sample
};

struct CandidateRecord {
    double cost = 0.0;
    std::optional<int> constrained_at;  // first violating timestep
};

struct PlannerResult {
    std::optional<int> chosen_index;  // nullopt = NoSolution
    double chosen_cost = 0.0;
    int feasible_count = 0;
    std::vector<CandidateRecord> records;
    std::vector<CandidateTrajectory> candidates;

    bool no_solution() const { return !chosen_index.has_value(); }
    const CandidateTrajectory& chosen() const {
        if (!chosen_index) throw DomainError("PlannerResult: no solution");
        return candidates[static_cast<std::size_t>(*chosen_index)];
    }
};

/// Lateral targets span the adjacent lane centers (clamped to existing lanes,
/// keeping lateral_count points), speeds span [speed_min, speed_max]; the
/// endpoints are exact. Order: lateral outer (ascending), speed inner.
inline std::vector<std::pair<double, double>> sample_targets(const SamplingSpec& spec,
                                                             const scene::VehicleState& ego,
                                                             const scene::RoadSpec& road) {
    if (spec.lateral_count < 1 || spec.speed_count < 1)
        throw DomainError("sample_targets: counts must be >= 1");
    const int ego_lane = scene::lane_of(road, ego.d);
    const int lo_lane = std::max(0, ego_lane - 1);
    const int hi_lane = std::min(road.lane_count - 1, ego_lane + 1);
    const double lat_lo = scene::lane_center(road, lo_lane);
    const double lat_hi = scene::lane_center(road, hi_lane);
    std::vector<std::pair<double, double>> targets;
    targets.reserve(static_cast<std::size_t>(spec.lateral_count) * spec.speed_count);
    for (int i = 0; i < spec.lateral_count; ++i) {
        double lat;
        if (i == 0)
            lat = lat_lo;
        else if (i == spec.lateral_count - 1)
            lat = spec.lateral_count > 1 ? lat_hi : lat_lo;
        else
            lat = lat_lo + (lat_hi - lat_lo) * i / (spec.lateral_count - 1);
        for (int j = 0; j < spec.speed_count; ++j) {
            double v;
            if (j == 0)
                v = spec.speed_min;
            else if (j == spec.speed_count - 1)
                v = spec.speed_count > 1 ? spec.speed_max : spec.speed_min;
            else
                v = spec.speed_min + (spec.speed_max - spec.speed_min) * j / (spec.speed_count - 1);
            targets.emplace_back(lat, v);
        }
    }
    return targets;
}

/// Lateral: quintic d(t) with (d0, v_d0, 0) -> (target_lat, 0, 0).
/// Longitudinal: cubic v(t) with (v0, a=0) -> (target_speed, a=0), s(t) by
/// exact integration. Boundary conditions hold analytically at t = horizon.
inline CandidateTrajectory generate_candidate(const scene::VehicleState& ego,
                                              std::pair<double, double> target,
                                              const SamplingSpec& spec) {
    const double H = spec.horizon;
    const double d0 = ego.d, vd0 = ego.v_d;
    const double v0 = ego.v_s;
    const auto [d1, v1] = target;

    // quintic coefficients: a0..a2 from initial conditions, a3..a5 from the
    // terminal conditions via a 3x3 solve
    const double a0 = d0, a1 = vd0, a2 = 0.0;
    const double h2 = H * H, h3 = h2 * H, h4 = h3 * H, h5 = h4 * H;
    Eigen::Matrix3d A;
    A << h3, h4, h5, 3 * h2, 4 * h3, 5 * h4, 6 * H, 12 * h2, 20 * h3;
    Eigen::Vector3d rhs(d1 - (a0 + a1 * H + a2 * h2), -(a1 + 2 * a2 * H), -2 * a2);
    const Eigen::Vector3d abc = A.partialPivLu().solve(rhs);
    const double a3 = abc(0), a4 = abc(1), a5 = abc(2);

    const double dv = v1 - v0;
    const int n = spec.horizon_steps();
    CandidateTrajectory c;
    c.target_lateral = d1;
    c.target_speed = v1;
    c.poses.reserve(n + 1);
    c.v_s.reserve(n + 1);
    c.v_d.reserve(n + 1);
    c.jerk_profile.reserve(n + 1);
    for (int k = 0; k <= n; ++k) {
        const double t = k * spec.dt;
        const double tau = t / H;
        const double t2 = t * t, t3 = t2 * t, t4 = t3 * t, t5 = t4 * t;
        const double d = a0 + a1 * t + a2 * t2 + a3 * t3 + a4 * t4 + a5 * t5;
        const double vd = a1 + 2 * a2 * t + 3 * a3 * t2 + 4 * a4 * t3 + 5 * a5 * t4;
        const double jd = 6 * a3 + 24 * a4 * t + 60 * a5 * t2;
        const double v = v0 + dv * (3 * tau * tau - 2 * tau * tau * tau);
        const double s = ego.s + v0 * t + dv * H * (tau * tau * tau - 0.5 * tau * tau * tau * tau);
        const double js = dv * (6.0 - 12.0 * tau) / h2;
        c.poses.push_back({s, d, t});
        c.v_s.push_back(v);
        c.v_d.push_back(vd);
        c.jerk_profile.push_back({jd, js});
    }
    return c;
}

constexpr double kJerkNorm = 10.0;  // m/s^3

/// cost = w_jerk * mean(j_lat^2 + j_lon^2)/j_norm^2
///      + w_speed * ((v_T - speed_limit)/speed_limit)^2
///      + w_lane * ((d_T - target_lane_center)/lane_width)^2
inline double candidate_cost(const CandidateTrajectory& c, const dataset::CostSpec& cost,
                             const scene::RoadSpec& road) {
    if (c.jerk_profile.empty()) throw DomainError("candidate_cost: empty jerk profile");
    double jerk_sq = 0.0;
    for (const auto& j : c.jerk_profile) jerk_sq += j[0] * j[0] + j[1] * j[1];
    jerk_sq /= static_cast<double>(c.jerk_profile.size());
    const double v_term = (c.v_s.back() - cost.speed_limit) / cost.speed_limit;
    const double d_term = (c.poses.back().d - cost.target_lane_center) / road.lane_width;
    return cost.w_jerk * jerk_sq / (kJerkNorm * kJerkNorm) + cost.w_speed * v_term * v_term +
           cost.w_lane * d_term * d_term;
}

/// State-action image of a candidate at timestep t: state replayed at t around
/// the candidate's own pose, action window from the candidate profile.
inline Tensor candidate_window_image(const dataset::DemonstrationInstance& inst,
                                     const dataset::ReplayWorld& world, const CandidateTrajectory& c,
                                     int t, int w_steps, const ogm::GridSpec& grid) {
    scene::VehicleState anchor;
    anchor.s = c.poses[t].s;
    anchor.d = c.poses[t].d;
    anchor.v_s = c.v_s[t];
    anchor.v_d = c.v_d[t];
    anchor.length = inst.ego_length;
    anchor.width = inst.ego_width;
    anchor.lane_id = scene::lane_of(inst.road, anchor.d);
    Tensor state = ogm::encode_state(dataset::replay_step(world, t), inst.road, anchor, grid);
    std::span<const scene::Pose> window(c.poses.data() + t, static_cast<std::size_t>(w_steps) + 1);
    std::vector<std::array<double, 2>> wvel(window.size());
    for (int j = 0; j <= w_steps; ++j) wvel[j] = {c.v_s[t + j], c.v_d[t + j]};
    Tensor action = ogm::encode_action(window, wvel, anchor, inst.ego_length, inst.ego_width, grid);
    return ogm::concat_state_action(state, action);
}

/// Solves one instance: generate all candidates, discard any whose constraint
/// classification fires at some timestep, return the cheapest survivor. Ties
/// break on smaller |target_lateral - current d|, then lower candidate index.
/// model == nullptr plans without constraints.
inline PlannerResult plan(const dataset::DemonstrationInstance& inst,
                          const constraint::ConstraintModel* model, const SamplingSpec& spec,
                          const ogm::GridSpec& grid, const pairing::PairingSpec& pair_spec = {}) {
    if (inst.t_steps() < 2) throw DomainError("plan: instance too short");
    if (static_cast<double>(inst.t_steps()) * inst.dt < spec.horizon - 1e-9)
        throw DomainError("plan: instance horizon shorter than planner horizon");

    const scene::VehicleState ego =
        scene::ego_state_at(inst.ego_track, 0, inst.ego_length, inst.ego_width, inst.road);
    const auto targets = sample_targets(spec, ego, inst.road);

    PlannerResult result;
    result.candidates.reserve(targets.size());
    result.records.resize(targets.size());
    for (const auto& t : targets) result.candidates.push_back(generate_candidate(ego, t, spec));
    for (std::size_t i = 0; i < targets.size(); ++i)
        result.records[i].cost = candidate_cost(result.candidates[i], inst.cost_spec, inst.road);

    if (model) {
        const auto world = dataset::make_replay(inst);
        const int w_steps = pairing::window_steps(pair_spec, spec.dt);
        const int n_eval = std::min<int>(spec.horizon_steps() - w_steps + 1,
                                         static_cast<int>(inst.t_steps()));
        std::vector<std::size_t> alive(targets.size());
        for (std::size_t i = 0; i < alive.size(); ++i) alive[i] = i;
        for (int t = 0; t < n_eval && !alive.empty(); ++t) {
            std::vector<Tensor> images;
            images.reserve(alive.size());
            for (std::size_t idx : alive)
                images.push_back(candidate_window_image(inst, world, result.candidates[idx], t, w_steps, grid));
            std::vector<const Tensor*> ptrs;
            ptrs.reserve(images.size());
            for (const auto& im : images) ptrs.push_back(&im);
            const auto probs = constraint::classify_batch(*model, neural::stack(ptrs));
            std::vector<std::size_t> next;
            next.reserve(alive.size());
            for (std::size_t k = 0; k < alive.size(); ++k) {
                if (probs[k] > model->decision_threshold)
                    result.records[alive[k]].constrained_at = t;
                else
                    next.push_back(alive[k]);
            }
            alive.swap(next);
        }
    }

    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < result.records.size(); ++i) {
        if (result.records[i].constrained_at) continue;
        ++result.feasible_count;
        if (!best) {
            best = i;
            continue;
        }
        const auto& cur = result.records[i];
        const auto& inc = result.records[*best];
        if (cur.cost < inc.cost) {
            best = i;
        } else if (cur.cost == inc.cost) {
            const double cur_dev = std::abs(result.candidates[i].target_lateral - ego.d);
            const double inc_dev = std::abs(result.candidates[*best].target_lateral - ego.d);
            if (cur_dev < inc_dev) best = i;
        }
    }
    if (best) {
        result.chosen_index = static_cast<int>(*best);
        result.chosen_cost = result.records[*best].cost;
    }
    return result;
}

/// Per-candidate trace (index, target_lateral, target_speed, cost,
/// constrained_at) for debugging.
inline void dump_trace_csv(const PlannerResult& r, std::ostream& os) {
    os << "index,target_lateral,target_speed,cost,constrained_at\n";
    for (std::size_t i = 0; i < r.records.size(); ++i) {
        os << i << ',' << format_double(r.candidates[i].target_lateral) << ','
           << format_double(r.candidates[i].target_speed) << ',' << format_double(r.records[i].cost)
           << ',';
        if (r.records[i].constrained_at) os << *r.records[i].constrained_at;
        os << '\n';
    }
}

}  // namespace cil::planner
