#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "cil/rng.hpp"
#include "cil/scene.hpp"

namespace cil::dataset {

/// Per-instance reward description: the planner minimizes jerk, tracks the
/// speed limit and pulls toward the anchor lane center.
struct CostSpec {
    double speed_limit = 14.0;
    double target_lane_center = 0.0;
    double w_jerk = 1.0;
    double w_speed = 1.0;
    double w_lane = 1.0;
};

enum class Split : int { Train = 0, Calib = 1, Eval = 2 };

/// One expert sample: T_steps of ego poses (the action list), per-neighbor
/// state tracks over the same window (the state list), and the instance cost.
struct DemonstrationInstance {
    struct NeighborTrack {
        std::int64_t vehicle_id = 0;
        std::vector<scene::VehicleState> states;  // length = t_steps
    };

    std::string id;
    std::int64_t anchor_frame = 0;
    std::vector<scene::Pose> ego_track;  // length = t_steps, ego_track[k].t == k*dt
    std::vector<NeighborTrack> neighbors;
    CostSpec cost_spec;
    scene::RoadSpec road;
    double ego_length = 4.5;
    double ego_width = 1.8;
    double dt = 0.1;
    Split split = Split::Train;

    std::size_t t_steps() const { return ego_track.size(); }
};

/// Recorded non-ego motion: snapshots indexed by frame, constant dt. Snapshots
/// are functions of the frame index only, never of any ego action.
struct ReplayWorld {
    std::vector<std::vector<scene::VehicleState>> frames;
    double dt = 0.1;
};

inline ReplayWorld make_replay(const DemonstrationInstance& inst) {
    ReplayWorld w;
    w.dt = inst.dt;
    w.frames.resize(inst.t_steps());
    for (std::size_t t = 0; t < inst.t_steps(); ++t) {
        w.frames[t].reserve(inst.neighbors.size());
        for (const auto& n : inst.neighbors) w.frames[t].push_back(n.states[t]);
    }
    return w;
}

inline const std::vector<scene::VehicleState>& replay_step(const ReplayWorld& world, std::int64_t t) {
    if (t < 0 || t >= static_cast<std::int64_t>(world.frames.size()))
        throw DomainError("replay_step: frame " + std::to_string(t) + " out of range");
    return world.frames[static_cast<std::size_t>(t)];
}

// ---------------------------------------------------------------------------
// synthetic expert

/// Ground truth is explicit: every vehicle keeps a bumper gap of at least
/// gap_m to its leader at all times, and changes lanes only into gaps that
/// preserve that bound.
struct SynthConfig {
    int lanes = 3;
    double lane_width = 3.7;
    int vehicles = 12;
    double duration_s = 120.0;
    double dt_s = 0.1;
    double gap_m = 8.0;
    double headway_s = 0.8;
    std::uint64_t seed = 1;
    int stride = 10;

    double speed_limit = 14.0;
    double road_length = 0.0;  // 0 = sized automatically
    double veh_length = 4.5;
    double veh_width = 1.8;
    double v_des_min_frac = 0.55;
    double v_des_max_frac = 0.95;
    double accel_max = 1.5;      // m/s^2
    double lc_duration_s = 2.2;  // lane-change sweep time
    double lc_rate_hz = 0.04;    // attempt rate per vehicle
    int t_steps = 50;
    double neighbor_window_s = 32.0;  // longitudinal inclusion half-extent
    double neighbor_window_d = 8.0;   // lateral inclusion half-extent
    double train_frac = 0.7;
    double calib_frac = 0.1;
};

struct SimTracks {
    struct Vehicle {
        std::int64_t id = 0;
        double length = 4.5;
        double width = 1.8;
        std::vector<double> s, d, v_s, v_d;  // per frame
    };
    std::vector<Vehicle> vehicles;
    std::int64_t n_frames = 0;
    double dt = 0.1;
    scene::RoadSpec road;
};

namespace detail {

struct SimVehicle {
    double s = 0, d = 0, v = 0, v_d = 0;
    double v_des = 10.0;
    int lane = 0;
    // active lane change, if any
    bool changing = false;
    int from_lane = 0, to_lane = 0;
    std::int64_t change_start = 0;
};

inline bool occupies_lane(const SimVehicle& v, int lane) {
    if (v.changing) return lane == v.from_lane || lane == v.to_lane;
    return lane == v.lane;
}

/// Nearest vehicle ahead of `self` sharing a lane, judged on frame-start
/// positions.
inline std::optional<std::size_t> leader_of(const std::vector<SimVehicle>& vs,
                                            const std::vector<double>& s_frame, std::size_t self) {
    std::optional<std::size_t> best;
    for (std::size_t j = 0; j < vs.size(); ++j) {
        if (j == self || s_frame[j] <= s_frame[self]) continue;
        bool shared = false;
        for (int lane = 0; lane < 16; ++lane) {
            if (occupies_lane(vs[self], lane) && occupies_lane(vs[j], lane)) {
                shared = true;
                break;
            }
        }
        if (!shared) continue;
        if (!best || s_frame[j] < s_frame[*best]) best = j;
    }
    return best;
}

inline double bumper_gap(double follower_s, double leader_s, double veh_length) {
    return (leader_s - 0.5 * veh_length) - (follower_s + 0.5 * veh_length);
}

// Quintic smoothstep used for the lateral lane-change sweep.
inline double smoothstep5(double u) { return u * u * u * (10.0 + u * (-15.0 + 6.0 * u)); }
inline double smoothstep5_deriv(double u) { return u * u * (30.0 + u * (-60.0 + 30.0 * u)); }

}  // namespace detail

inline void validate(const SynthConfig& c) {
    if (c.lanes < 1 || c.vehicles < 1) throw ConfigError("synthetic: lanes and vehicles must be >= 1");
    if (c.dt_s <= 0 || c.duration_s <= 0) throw ConfigError("synthetic: dt_s and duration_s must be positive");
    if (c.gap_m <= 0 || c.headway_s <= 0) throw ConfigError("synthetic: gap_m and headway_s must be positive");
    if (c.t_steps < 3) throw ConfigError("synthetic: t_steps must be >= 3");
    const int per_lane = (c.vehicles + c.lanes - 1) / c.lanes;
    const double spacing = c.veh_length + c.gap_m + c.headway_s * c.speed_limit + 12.0;
    const double needed = per_lane * spacing + c.duration_s * c.speed_limit + 100.0;
    if (c.road_length > 0.0 && c.road_length < needed)
        throw ConfigError("synthetic: road_length " + format_double(c.road_length) +
                          " too short for vehicle density at min gap gap_m=" + format_double(c.gap_m) +
                          " (need >= " + format_double(needed) + ")");
}

/// Simulates lane-following traffic with the hard minimum-gap rule. Vehicles
/// are updated front to back each frame so the closed-loop speed bound
/// v <= v_leader + (gap - G)/tau keeps gap >= G by induction.
inline SimTracks simulate_traffic(const SynthConfig& cfg) {
    validate(cfg);
    Rng rng(cfg.seed);
    const std::int64_t n_frames = std::llround(cfg.duration_s / cfg.dt_s);
    const double dt = cfg.dt_s;
    const int per_lane = (cfg.vehicles + cfg.lanes - 1) / cfg.lanes;
    const double spacing_base = cfg.veh_length + cfg.gap_m + cfg.headway_s * cfg.speed_limit + 12.0;

    SimTracks out;
    out.n_frames = n_frames;
    out.dt = dt;
    out.road.lane_count = cfg.lanes;
    out.road.lane_width = cfg.lane_width;
    out.road.speed_limit = cfg.speed_limit;
    out.road.length = cfg.road_length > 0.0
                          ? cfg.road_length
                          : per_lane * spacing_base + cfg.duration_s * cfg.speed_limit + 100.0;

    std::vector<detail::SimVehicle> vs(cfg.vehicles);
    std::vector<double> lane_front(static_cast<std::size_t>(cfg.lanes), 0.0);
    for (int i = 0; i < cfg.vehicles; ++i) {
        auto& v = vs[i];
        v.lane = i % cfg.lanes;
        v.v_des = cfg.speed_limit * rng.uniform(cfg.v_des_min_frac, cfg.v_des_max_frac);
        v.v = v.v_des;
        v.d = (v.lane + 0.5) * cfg.lane_width;
        const double slack = rng.uniform(0.0, 12.0);
        if (i < cfg.lanes) {
            v.s = per_lane * spacing_base;  // lane front-runner
        } else {
            v.s = lane_front[v.lane] - (cfg.veh_length + cfg.gap_m + cfg.headway_s * v.v_des + slack);
        }
        lane_front[v.lane] = v.s;
    }

    out.vehicles.resize(cfg.vehicles);
    for (int i = 0; i < cfg.vehicles; ++i) {
        out.vehicles[i].id = i;
        out.vehicles[i].length = cfg.veh_length;
        out.vehicles[i].width = cfg.veh_width;
        out.vehicles[i].s.reserve(n_frames);
    }

    const std::int64_t lc_steps = std::max<std::int64_t>(1, std::llround(cfg.lc_duration_s / dt));
    std::vector<std::size_t> order(vs.size());

    for (std::int64_t f = 0; f < n_frames; ++f) {
        // lane-change attempts, vehicle-id order, judged on current states
        for (std::size_t i = 0; i < vs.size(); ++i) {
            auto& v = vs[i];
            if (v.changing) continue;
            if (rng.uniform01() >= cfg.lc_rate_hz * dt) continue;
            const int dir = rng.uniform01() < 0.5 ? -1 : 1;
            const int target = v.lane + dir;
            if (target < 0 || target >= cfg.lanes) continue;
            // target-lane neighbors
            std::optional<std::size_t> lead, follow;
            for (std::size_t j = 0; j < vs.size(); ++j) {
                if (j == i || !detail::occupies_lane(vs[j], target)) continue;
                if (vs[j].s > v.s && (!lead || vs[j].s < vs[*lead].s)) lead = j;
                if (vs[j].s < v.s && (!follow || vs[j].s > vs[*follow].s)) follow = j;
            }
            bool ok = true;
            if (lead) {
                const double g = detail::bumper_gap(v.s, vs[*lead].s, cfg.veh_length);
                if (g < cfg.gap_m + cfg.headway_s * v.v) ok = false;
            }
            if (follow) {
                const double g = detail::bumper_gap(vs[*follow].s, v.s, cfg.veh_length);
                const double closing = std::max(0.0, vs[*follow].v - v.v);
                if (g < cfg.gap_m + cfg.headway_s * vs[*follow].v + cfg.lc_duration_s * closing) ok = false;
            }
            if (!ok) continue;
            v.changing = true;
            v.from_lane = v.lane;
            v.to_lane = target;
            v.change_start = f;
        }

        // record, then advance front-to-back
        for (std::size_t i = 0; i < vs.size(); ++i) {
            out.vehicles[i].s.push_back(vs[i].s);
            out.vehicles[i].d.push_back(vs[i].d);
            out.vehicles[i].v_s.push_back(vs[i].v);
            out.vehicles[i].v_d.push_back(vs[i].v_d);
        }

        // speeds update front to back against frame-start positions: the bound
        // v <= v_leader_new + (gap - G)/tau then keeps gap >= G by induction
        std::vector<double> s_frame(vs.size());
        for (std::size_t i = 0; i < vs.size(); ++i) s_frame[i] = vs[i].s;
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (s_frame[a] != s_frame[b]) return s_frame[a] > s_frame[b];
            return a < b;
        });
        for (std::size_t oi = 0; oi < order.size(); ++oi) {
            auto& v = vs[order[oi]];
            double v_new = std::min(v.v + cfg.accel_max * dt, v.v_des);
            const auto lead = detail::leader_of(vs, s_frame, order[oi]);
            if (lead) {
                const double g = detail::bumper_gap(s_frame[order[oi]], s_frame[*lead], cfg.veh_length);
                v_new = std::min(v_new, vs[*lead].v + (g - cfg.gap_m) / cfg.headway_s);
            }
            v.v = std::max(0.0, v_new);
            v.s += v.v * dt;
            if (v.changing) {
                const double u =
                    std::clamp(static_cast<double>(f + 1 - v.change_start) / static_cast<double>(lc_steps),
                               0.0, 1.0);
                const double c0 = (v.from_lane + 0.5) * cfg.lane_width;
                const double c1 = (v.to_lane + 0.5) * cfg.lane_width;
                v.d = c0 + (c1 - c0) * detail::smoothstep5(u);
                v.v_d = (c1 - c0) * detail::smoothstep5_deriv(u) / (lc_steps * dt);
                v.lane = scene::lane_of(out.road, v.d);
                if (u >= 1.0) {
                    v.changing = false;
                    v.lane = v.to_lane;
                    v.v_d = 0.0;
                }
            }
        }
    }
    return out;
}

namespace detail {

inline Split split_of(std::uint64_t seed, std::int64_t vehicle, std::int64_t block, double train_frac,
                      double calib_frac) {
    std::uint64_t h = Rng::derive(seed, 7);
    h = Rng::derive(h ^ static_cast<std::uint64_t>(vehicle), 11);
    h = Rng::derive(h ^ static_cast<std::uint64_t>(block), 13);
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    if (u < train_frac) return Split::Train;
    if (u < train_frac + calib_frac) return Split::Calib;
    return Split::Eval;
}

}  // namespace detail

/// Slices tracks into demonstration instances: one per (vehicle, anchor) with
/// a full future window plus one lookahead frame, anchors stepped by stride.
inline std::vector<DemonstrationInstance> slice_instances(const SimTracks& tracks, const SynthConfig& cfg) {
    std::vector<DemonstrationInstance> out;
    const std::int64_t t_steps = cfg.t_steps;
    for (const auto& veh : tracks.vehicles) {
        for (std::int64_t a = 0; a + t_steps <= tracks.n_frames - 1; a += cfg.stride) {
            DemonstrationInstance inst;
            inst.id = "v" + std::to_string(veh.id) + "_f" + std::to_string(a);
            inst.anchor_frame = a;
            inst.dt = tracks.dt;
            inst.road = tracks.road;
            inst.ego_length = veh.length;
            inst.ego_width = veh.width;
            inst.ego_track.reserve(t_steps);
            for (std::int64_t k = 0; k < t_steps; ++k)
                inst.ego_track.push_back({veh.s[a + k], veh.d[a + k], k * tracks.dt});
            for (const auto& other : tracks.vehicles) {
                if (other.id == veh.id) continue;
                if (std::abs(other.s[a] - veh.s[a]) > cfg.neighbor_window_s ||
                    std::abs(other.d[a] - veh.d[a]) > cfg.neighbor_window_d)
                    continue;
                DemonstrationInstance::NeighborTrack nt;
                nt.vehicle_id = other.id;
                nt.states.reserve(t_steps);
                for (std::int64_t k = 0; k < t_steps; ++k) {
                    scene::VehicleState st;
                    st.s = other.s[a + k];
                    st.d = other.d[a + k];
                    st.v_s = other.v_s[a + k];
                    st.v_d = other.v_d[a + k];
                    st.length = other.length;
                    st.width = other.width;
                    st.lane_id = scene::lane_of(tracks.road, st.d);
                    nt.states.push_back(st);
                }
                inst.neighbors.push_back(std::move(nt));
            }
            inst.cost_spec.speed_limit = tracks.road.speed_limit;
            inst.cost_spec.target_lane_center =
                scene::lane_center(tracks.road, scene::lane_of(tracks.road, veh.d[a]));
            inst.split = detail::split_of(cfg.seed, veh.id, a / (2 * t_steps), cfg.train_frac,
                                          cfg.calib_frac);
            out.push_back(std::move(inst));
        }
    }
    return out;
}

inline std::vector<DemonstrationInstance> generate_synthetic(const SynthConfig& cfg) {
    return slice_instances(simulate_traffic(cfg), cfg);
}

// ---------------------------------------------------------------------------
// NGSIM-format CSV (header: Vehicle_ID,Frame_ID,Local_X,Local_Y,v_Vel,Lane_ID;
// Local_X lateral and Local_Y longitudinal in feet, v_Vel in ft/s)

constexpr double kFootToMeter = 0.3048;

struct IngestOptions {
    double dt = 0.1;
    int stride = 1;
    double neighbor_window_s = 32.0;
    double neighbor_window_d = 8.0;
    std::uint64_t split_seed = 1;
    double train_frac = 0.7;
    double calib_frac = 0.1;
};

namespace detail {

struct NgsimTrack {
    std::int64_t vehicle_id = 0;
    std::int64_t first_frame = 0;
    std::vector<double> d, s, v_s;  // meters, per consecutive frame
    std::vector<double> v_d;        // finite-differenced
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace detail

inline std::vector<DemonstrationInstance> ingest_ngsim(const std::string& path, const scene::RoadSpec& road,
                                                       int t_steps, int stride,
                                                       const IngestOptions& opt = {}) {
    std::ifstream is(path);
    if (!is) throw IoError("ingest_ngsim: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw FormatError("ingest_ngsim: empty file");
    const auto header = detail::split_csv_line(line);
    const char* required[] = {"Vehicle_ID", "Frame_ID", "Local_X", "Local_Y", "v_Vel", "Lane_ID"};
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const char* name : required)
        if (!col.count(name)) throw FormatError(std::string("ingest_ngsim: missing column ") + name);

    // gather rows per vehicle, enforcing monotone frame ids
    std::map<std::int64_t, std::vector<std::array<double, 4>>> rows;  // vid -> (frame, x, y, v)
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() < header.size())
            throw FormatError("ingest_ngsim: short row at line " + std::to_string(line_no));
        const std::int64_t vid = std::stoll(f[col["Vehicle_ID"]]);
        const double frame = std::stod(f[col["Frame_ID"]]);
        auto& r = rows[vid];
        if (!r.empty() && frame <= r.back()[0])
            throw DataError("ingest_ngsim: non-monotone Frame_ID for vehicle " + std::to_string(vid) +
                            " at line " + std::to_string(line_no));
        r.push_back({frame, std::stod(f[col["Local_X"]]), std::stod(f[col["Local_Y"]]),
                     std::stod(f[col["v_Vel"]])});
    }

    std::vector<detail::NgsimTrack> tracks;
    for (auto& [vid, r] : rows) {
        detail::NgsimTrack t;
        t.vehicle_id = vid;
        t.first_frame = static_cast<std::int64_t>(r.front()[0]);
        for (std::size_t k = 0; k < r.size(); ++k) {
            if (static_cast<std::int64_t>(r[k][0]) != t.first_frame + static_cast<std::int64_t>(k))
                throw DataError("ingest_ngsim: non-consecutive Frame_ID for vehicle " +
                                std::to_string(vid));
            t.d.push_back(r[k][1] * kFootToMeter);
            t.s.push_back(r[k][2] * kFootToMeter);
            t.v_s.push_back(r[k][3] * kFootToMeter);
        }
        // lateral velocity by the same differencing used for ego tracks
        std::vector<scene::Pose> poses(t.s.size());
        for (std::size_t k = 0; k < t.s.size(); ++k) poses[k] = {t.s[k], t.d[k], k * opt.dt};
        const auto vel = scene::track_velocities(poses);
        t.v_d.resize(t.s.size(), 0.0);
        for (std::size_t k = 0; k < t.s.size(); ++k) t.v_d[k] = vel[k][1];
        tracks.push_back(std::move(t));
    }

    std::vector<DemonstrationInstance> out;
    for (const auto& ego : tracks) {
        const std::int64_t n = static_cast<std::int64_t>(ego.s.size());
        for (std::int64_t a = 0; a + t_steps <= n; a += stride) {
            DemonstrationInstance inst;
            inst.id = "ngsim_v" + std::to_string(ego.vehicle_id) + "_f" +
                      std::to_string(ego.first_frame + a);
            inst.anchor_frame = ego.first_frame + a;
            inst.dt = opt.dt;
            inst.road = road;
            inst.ego_track.reserve(t_steps);
            for (std::int64_t k = 0; k < t_steps; ++k)
                inst.ego_track.push_back({ego.s[a + k], ego.d[a + k], k * opt.dt});
            for (const auto& other : tracks) {
                if (other.vehicle_id == ego.vehicle_id) continue;
                // must cover the whole window
                const std::int64_t rel = (ego.first_frame + a) - other.first_frame;
                if (rel < 0 || rel + t_steps > static_cast<std::int64_t>(other.s.size())) continue;
                if (std::abs(other.s[rel] - ego.s[a]) > opt.neighbor_window_s ||
                    std::abs(other.d[rel] - ego.d[a]) > opt.neighbor_window_d)
                    continue;
                DemonstrationInstance::NeighborTrack nt;
                nt.vehicle_id = other.vehicle_id;
                for (std::int64_t k = 0; k < t_steps; ++k) {
                    scene::VehicleState st;
                    st.s = other.s[rel + k];
                    st.d = other.d[rel + k];
                    st.v_s = other.v_s[rel + k];
                    st.v_d = other.v_d[rel + k];
                    st.lane_id = scene::lane_of(road, st.d);
                    nt.states.push_back(st);
                }
                inst.neighbors.push_back(std::move(nt));
            }
            inst.cost_spec.speed_limit = road.speed_limit;
            inst.cost_spec.target_lane_center =
                scene::lane_center(road, scene::lane_of(road, ego.d[a]));
            inst.split = detail::split_of(opt.split_seed, ego.vehicle_id, a / (2 * t_steps),
                                          opt.train_frac, opt.calib_frac);
            out.push_back(std::move(inst));
        }
    }
    return out;
}

/// Writes simulated tracks in the NGSIM column format (feet units), suitable
/// for re-ingestion.
inline void export_ngsim(const SimTracks& tracks, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("export_ngsim: cannot open " + path);
    os << "Vehicle_ID,Frame_ID,Local_X,Local_Y,v_Vel,Lane_ID\n";
    for (const auto& v : tracks.vehicles) {
        for (std::int64_t f = 0; f < tracks.n_frames; ++f) {
            os << v.id << ',' << f << ',' << format_double(v.d[f] / kFootToMeter) << ','
               << format_double(v.s[f] / kFootToMeter) << ','
               << format_double(v.v_s[f] / kFootToMeter) << ','
               << (scene::lane_of(tracks.road, v.d[f]) + 1) << '\n';
        }
    }
    if (!os) throw IoError("export_ngsim: write failed");
}

// ---------------------------------------------------------------------------
// dataset cache: line-delimited text, reloads bit-exactly
//
// record layout:
//   cil-dataset v1
//   instance <id> <anchor_frame> <split> <t_steps> <dt> <ego_length> <ego_width>
//   road <lane_count> <lane_width> <length> <speed_limit>
//   cost <speed_limit> <target_lane_center> <w_jerk> <w_speed> <w_lane>
//   ego <s d> * t_steps
//   neighbor <vehicle_id> <length> <width> <s d v_s v_d lane_id> * t_steps
//   end

inline void save_cache(const std::vector<DemonstrationInstance>& instances, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("save_cache: cannot open " + path);
    os << "cil-dataset v1\n";
    for (const auto& inst : instances) {
        os << "instance " << inst.id << ' ' << inst.anchor_frame << ' ' << static_cast<int>(inst.split)
           << ' ' << inst.t_steps() << ' ' << format_double(inst.dt) << ' '
           << format_double(inst.ego_length) << ' ' << format_double(inst.ego_width) << '\n';
        os << "road " << inst.road.lane_count << ' ' << format_double(inst.road.lane_width) << ' '
           << format_double(inst.road.length) << ' ' << format_double(inst.road.speed_limit) << '\n';
        os << "cost " << format_double(inst.cost_spec.speed_limit) << ' '
           << format_double(inst.cost_spec.target_lane_center) << ' '
           << format_double(inst.cost_spec.w_jerk) << ' ' << format_double(inst.cost_spec.w_speed)
           << ' ' << format_double(inst.cost_spec.w_lane) << '\n';
        os << "ego";
        for (const auto& p : inst.ego_track) os << ' ' << format_double(p.s) << ' ' << format_double(p.d);
        os << '\n';
        for (const auto& n : inst.neighbors) {
            os << "neighbor " << n.vehicle_id << ' ' << format_double(n.states[0].length) << ' '
               << format_double(n.states[0].width);
            for (const auto& st : n.states)
                os << ' ' << format_double(st.s) << ' ' << format_double(st.d) << ' '
                   << format_double(st.v_s) << ' ' << format_double(st.v_d) << ' ' << st.lane_id;
            os << '\n';
        }
        os << "end\n";
    }
    if (!os) throw IoError("save_cache: write failed");
}

inline std::vector<DemonstrationInstance> load_cache(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("load_cache: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != "cil-dataset v1")
        throw FormatError("load_cache: bad magic line");
    std::vector<DemonstrationInstance> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag != "instance") throw FormatError("load_cache: expected instance record");
        DemonstrationInstance inst;
        int split = 0;
        std::size_t t_steps = 0;
        ls >> inst.id >> inst.anchor_frame >> split >> t_steps >> inst.dt >> inst.ego_length >>
            inst.ego_width;
        if (!ls) throw FormatError("load_cache: bad instance header");
        inst.split = static_cast<Split>(split);

        if (!std::getline(is, line)) throw FormatError("load_cache: truncated record");
        std::istringstream rs(line);
        rs >> tag >> inst.road.lane_count >> inst.road.lane_width >> inst.road.length >>
            inst.road.speed_limit;
        if (tag != "road" || !rs) throw FormatError("load_cache: bad road line");

        if (!std::getline(is, line)) throw FormatError("load_cache: truncated record");
        std::istringstream cs(line);
        cs >> tag >> inst.cost_spec.speed_limit >> inst.cost_spec.target_lane_center >>
            inst.cost_spec.w_jerk >> inst.cost_spec.w_speed >> inst.cost_spec.w_lane;
        if (tag != "cost" || !cs) throw FormatError("load_cache: bad cost line");

        if (!std::getline(is, line)) throw FormatError("load_cache: truncated record");
        std::istringstream es(line);
        es >> tag;
        if (tag != "ego") throw FormatError("load_cache: bad ego line");
        for (std::size_t k = 0; k < t_steps; ++k) {
            scene::Pose p;
            es >> p.s >> p.d;
            p.t = k * inst.dt;
            if (!es) throw FormatError("load_cache: short ego track");
            inst.ego_track.push_back(p);
        }

        while (std::getline(is, line)) {
            if (line == "end") break;
            std::istringstream ns(line);
            ns >> tag;
            if (tag != "neighbor") throw FormatError("load_cache: expected neighbor or end");
            DemonstrationInstance::NeighborTrack nt;
            double length = 0, width = 0;
            ns >> nt.vehicle_id >> length >> width;
            for (std::size_t k = 0; k < t_steps; ++k) {
                scene::VehicleState st;
                st.length = length;
                st.width = width;
                ns >> st.s >> st.d >> st.v_s >> st.v_d >> st.lane_id;
                if (!ns) throw FormatError("load_cache: short neighbor track");
                nt.states.push_back(st);
            }
            inst.neighbors.push_back(std::move(nt));
        }
        out.push_back(std::move(inst));
    }
    return out;
}

inline std::vector<DemonstrationInstance> filter_split(const std::vector<DemonstrationInstance>& all,
                                                       Split split) {
    std::vector<DemonstrationInstance> out;
    for (const auto& i : all)
        if (i.split == split) out.push_back(i);
    return out;
}

}  // namespace cil::dataset
