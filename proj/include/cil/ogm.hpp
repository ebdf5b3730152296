#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <span>

#include "cil/scene.hpp"
#include "cil/tensor.hpp"

namespace cil::ogm {

using neural::Tensor;

/// Ego-centric grid geometry. Rows index the longitudinal axis, columns the
/// lateral axis; both extents must be even so the ego sits exactly on the
/// center cell (height/2, width/2).
struct GridSpec {
    double resolution = 0.5;   // m per cell
    int width_cells = 32;      // lateral
    int height_cells = 128;    // longitudinal
    double v_norm = 24.0;      // m/s, velocity-channel normalization

    void validate() const {
        if (resolution <= 0.0) throw DomainError("GridSpec: resolution must be positive");
        if (width_cells <= 0 || height_cells <= 0 || width_cells % 2 != 0 || height_cells % 2 != 0)
            throw DomainError("GridSpec: cell extents must be positive and even");
    }
    double forward_coverage() const { return (height_cells / 2 - 1) * resolution; }
};

struct CellIndex {
    int row = 0;
    int col = 0;
};

/// Grid cell containing a world point, relative to the ego anchor; nullopt
/// when the point falls outside the grid.
inline std::optional<CellIndex> to_cell(const GridSpec& spec, const scene::VehicleState& anchor,
                                        double target_s, double target_d) {
    const long row = spec.height_cells / 2 + std::llround((target_s - anchor.s) / spec.resolution);
    const long col = spec.width_cells / 2 + std::llround((target_d - anchor.d) / spec.resolution);
    if (row < 0 || row >= spec.height_cells || col < 0 || col >= spec.width_cells) return std::nullopt;
    return CellIndex{static_cast<int>(row), static_cast<int>(col)};
}

namespace detail {

/// Rasterizes an axis-aligned footprint into [plane0=occupancy, plane1, plane2]
/// of `planes` (a {C,H,W} tensor), writing v0/v1 on every occupied cell. A cell
/// is occupied iff its center lies inside the rectangle (closed bounds).
inline void rasterize_footprint(Tensor& planes, int occ_plane, const GridSpec& spec,
                                const scene::VehicleState& anchor, double s, double d, double length,
                                double width, double v0, double v1) {
    const int h = spec.height_cells, w = spec.width_cells;
    const double res = spec.resolution;
    const long r_lo = std::max(0L, static_cast<long>(std::ceil((s - 0.5 * length - anchor.s) / res)) + h / 2);
    const long r_hi = std::min<long>(h - 1, static_cast<long>(std::floor((s + 0.5 * length - anchor.s) / res)) + h / 2);
    const long c_lo = std::max(0L, static_cast<long>(std::ceil((d - 0.5 * width - anchor.d) / res)) + w / 2);
    const long c_hi = std::min<long>(w - 1, static_cast<long>(std::floor((d + 0.5 * width - anchor.d) / res)) + w / 2);
    double* occ = planes.ptr() + static_cast<std::size_t>(occ_plane) * h * w;
    double* ch1 = occ + static_cast<std::size_t>(h) * w;
    double* ch2 = ch1 + static_cast<std::size_t>(h) * w;
    for (long r = r_lo; r <= r_hi; ++r) {
        for (long c = c_lo; c <= c_hi; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * w + c;
            occ[i] = 1.0;
            ch1[i] = v0;
            ch2[i] = v1;
        }
    }
}

}  // namespace detail

/// State image: [occupancy, v_s_rel, v_d_rel, lane_markings], each H x W.
/// Neighbor velocities are stored relative to the anchor and divided by v_norm.
inline Tensor encode_state(std::span<const scene::VehicleState> neighbors, const scene::RoadSpec& road,
                           const scene::VehicleState& anchor, const GridSpec& spec) {
    spec.validate();
    const int h = spec.height_cells, w = spec.width_cells;
    Tensor planes({4, h, w});
    for (const auto& n : neighbors) {
        detail::rasterize_footprint(planes, 0, spec, anchor, n.s, n.d, n.length, n.width,
                                    (n.v_s - anchor.v_s) / spec.v_norm,
                                    (n.v_d - anchor.v_d) / spec.v_norm);
    }
    double* lanes = planes.ptr() + static_cast<std::size_t>(3) * h * w;
    for (int k = 0; k <= road.lane_count; ++k) {
        const double boundary_d = k * road.lane_width;
        const long c = spec.width_cells / 2 + std::llround((boundary_d - anchor.d) / spec.resolution);
        if (c < 0 || c >= w) continue;
        for (int r = 0; r < h; ++r) lanes[static_cast<std::size_t>(r) * w + c] = 1.0;
    }
    return planes;
}

using scene::track_velocities;

/// Action image: [occupancy, v_s_rel, v_d_rel] of the ego footprint swept
/// through the window. Later poses overwrite earlier velocities on shared
/// cells. Velocities are per-pose minus the anchor velocity, over v_norm.
inline Tensor encode_action(std::span<const scene::Pose> window,
                            std::span<const std::array<double, 2>> window_vel,
                            const scene::VehicleState& anchor, double ego_length, double ego_width,
                            const GridSpec& spec) {
    spec.validate();
    if (window.empty()) throw DomainError("encode_action: empty window");
    if (window_vel.size() != window.size())
        throw DomainError("encode_action: velocity count must match pose count");
    Tensor planes({3, spec.height_cells, spec.width_cells});
    for (std::size_t j = 0; j < window.size(); ++j) {
        detail::rasterize_footprint(planes, 0, spec, anchor, window[j].s, window[j].d, ego_length,
                                    ego_width, (window_vel[j][0] - anchor.v_s) / spec.v_norm,
                                    (window_vel[j][1] - anchor.v_d) / spec.v_norm);
    }
    return planes;
}

/// Velocity-from-track convenience overload.
inline Tensor encode_action(std::span<const scene::Pose> window, const scene::VehicleState& anchor,
                            double ego_length, double ego_width, const GridSpec& spec) {
    const auto vel = track_velocities(window);
    return encode_action(window, std::span<const std::array<double, 2>>(vel), anchor, ego_length,
                         ego_width, spec);
}

/// Concatenates state (4 planes) and action (3 planes) into the 7-plane
/// network input, order [occ_state, vs_state, vd_state, lanes, occ_action,
/// vs_action, vd_action].
inline Tensor concat_state_action(const Tensor& state, const Tensor& action) {
    if (state.rank() != 3 || action.rank() != 3 || state.dim(0) != 4 || action.dim(0) != 3 ||
        state.dim(1) != action.dim(1) || state.dim(2) != action.dim(2))
        throw DomainError("concat_state_action: expected {4,H,W} and {3,H,W}");
    Tensor out({7, state.dim(1), state.dim(2)});
    std::copy(state.data.begin(), state.data.end(), out.data.begin());
    std::copy(action.data.begin(), action.data.end(), out.data.begin() + state.data.size());
    return out;
}

/// Writes each plane of a {C,H,W} tensor as an 8-bit binary PGM, values mapped
/// affinely from [min, max] to [0, 255]; a constant plane maps to 0. Row h-1
/// (farthest forward) is the top image row.
inline void render_pgm(const Tensor& planes, const std::string& path_stem) {
    if (planes.rank() != 3) throw DomainError("render_pgm: expected {C,H,W}");
    const int c = static_cast<int>(planes.dim(0));
    const int h = static_cast<int>(planes.dim(1));
    const int w = static_cast<int>(planes.dim(2));
    for (int p = 0; p < c; ++p) {
        const double* plane = planes.ptr() + static_cast<std::size_t>(p) * h * w;
        double lo = plane[0], hi = plane[0];
        for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) {
            if (!std::isfinite(plane[i])) throw NumericError("render_pgm: non-finite plane value");
            lo = std::min(lo, plane[i]);
            hi = std::max(hi, plane[i]);
        }
        const double span = hi - lo;
        const std::string path = path_stem + "_plane" + std::to_string(p) + ".pgm";
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IoError("render_pgm: cannot open " + path);
        os << "P5\n" << w << " " << h << "\n255\n";
        for (int r = h - 1; r >= 0; --r) {
            for (int col = 0; col < w; ++col) {
                const double v = plane[static_cast<std::size_t>(r) * w + col];
                const int byte = span > 0.0 ? static_cast<int>(std::lround((v - lo) / span * 255.0)) : 0;
                os.put(static_cast<char>(std::clamp(byte, 0, 255)));
            }
        }
        if (!os) throw IoError("render_pgm: write failed for " + path);
    }
}

}  // namespace cil::ogm
