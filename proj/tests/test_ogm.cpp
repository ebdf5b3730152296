#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "cil/ogm.hpp"
#include "cil/rng.hpp"

using namespace cil;
using namespace cil::ogm;
using cil::neural::Tensor;

namespace {

scene::VehicleState make_anchor(double s, double d, double vs = 10.0, double vd = 0.0) {
    scene::VehicleState v;
    v.s = s;
    v.d = d;
    v.v_s = vs;
    v.v_d = vd;
    return v;
}

double plane_at(const Tensor& planes, int p, int r, int c) {
    const auto h = planes.dim(1), w = planes.dim(2);
    return planes.data[(static_cast<std::size_t>(p) * h + r) * w + c];
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("to_cell centers the ego and maps offsets") {
    GridSpec spec;  // 32x128 @ 0.5
    const auto anchor = make_anchor(200.0, 5.55);
    const auto center = to_cell(spec, anchor, anchor.s, anchor.d);
    REQUIRE(center);
    CHECK(center->row == 64);
    CHECK(center->col == 16);
    const auto ahead = to_cell(spec, anchor, anchor.s + 10.0, anchor.d);
    REQUIRE(ahead);
    CHECK(ahead->row == 84);
    CHECK(ahead->col == 16);
    CHECK_FALSE(to_cell(spec, anchor, anchor.s + 40.0, anchor.d));  // beyond 31.5 m forward coverage
}

TEST_CASE("default grid covers 16 m x 64 m") {
    GridSpec spec;
    CHECK(spec.width_cells * spec.resolution == Catch::Approx(16.0));
    CHECK(spec.height_cells * spec.resolution == Catch::Approx(64.0));
}

TEST_CASE("encode_state: empty frame leaves only lane markings") {
    GridSpec spec;
    scene::RoadSpec road;
    const auto anchor = make_anchor(100.0, scene::lane_center(road, 1));
    const Tensor planes = encode_state({}, road, anchor, spec);
    for (int p = 0; p < 3; ++p)
        for (int r = 0; r < spec.height_cells; ++r)
            for (int c = 0; c < spec.width_cells; ++c) CHECK(plane_at(planes, p, r, c) == 0.0);
    // lane plane marks whole columns only
    int marked_cols = 0;
    for (int c = 0; c < spec.width_cells; ++c) {
        const double v0 = plane_at(planes, 3, 0, c);
        for (int r = 0; r < spec.height_cells; ++r) CHECK(plane_at(planes, 3, r, c) == v0);
        marked_cols += v0 > 0 ? 1 : 0;
    }
    CHECK(marked_cols == 4);  // boundaries of a 3-lane road in view
}

TEST_CASE("encode_state: neighbor ten meters ahead at equal speed") {
    GridSpec spec;
    scene::RoadSpec road;
    const auto anchor = make_anchor(100.0, scene::lane_center(road, 1), 12.0);
    scene::VehicleState nb = anchor;
    nb.s += 10.0;
    const std::vector<scene::VehicleState> nbs{nb};
    const Tensor planes = encode_state(nbs, road, anchor, spec);
    CHECK(plane_at(planes, 0, 84, 16) == 1.0);
    CHECK(plane_at(planes, 0, 80, 16) == 1.0);
    CHECK(plane_at(planes, 0, 88, 16) == 1.0);
    CHECK(plane_at(planes, 0, 79, 16) == 0.0);
    CHECK(plane_at(planes, 1, 84, 16) == 0.0);  // relative speed zero
}

TEST_CASE("encode_state: velocity channel normalization") {
    GridSpec spec;  // v_norm 24
    scene::RoadSpec road;
    const auto anchor = make_anchor(100.0, scene::lane_center(road, 1), 10.0);
    scene::VehicleState nb = anchor;
    nb.s += 10.0;
    nb.v_s = anchor.v_s + 6.0;
    const std::vector<scene::VehicleState> nbs{nb};
    const Tensor planes = encode_state(nbs, road, anchor, spec);
    CHECK(plane_at(planes, 1, 84, 16) == Catch::Approx(0.25));
}

TEST_CASE("encode_action basics") {
    GridSpec spec;
    scene::RoadSpec road;
    SECTION("stationary ego occupies only the center blob") {
        const auto anchor = make_anchor(50.0, scene::lane_center(road, 0), 0.0);
        std::vector<scene::Pose> window;
        for (int k = 0; k <= 10; ++k) window.push_back({anchor.s, anchor.d, 0.1 * k});
        const Tensor planes = encode_action(window, anchor, 4.5, 1.8, spec);
        CHECK(plane_at(planes, 0, 64, 16) == 1.0);
        CHECK(plane_at(planes, 0, 70, 16) == 0.0);  // 3 m ahead, outside the footprint
        for (std::size_t i = spec.height_cells * spec.width_cells; i < planes.data.size(); ++i)
            CHECK(planes.data[i] == 0.0);  // velocity channels all zero
    }
    SECTION("constant 10 m/s spans rows 64..84") {
        const auto anchor = make_anchor(50.0, scene::lane_center(road, 0), 10.0);
        std::vector<scene::Pose> window;
        for (int k = 0; k <= 10; ++k) window.push_back({anchor.s + k * 0.1 * 10.0, anchor.d, 0.1 * k});
        const Tensor planes = encode_action(window, anchor, 4.5, 1.8, spec);
        for (int r = 64; r <= 84; ++r) CHECK(plane_at(planes, 0, r, 16) == 1.0);
        CHECK(plane_at(planes, 1, 84, 16) == 0.0);  // no relative motion
    }
    SECTION("accelerating 10 -> 12 marks the final cells with 2/24") {
        const auto anchor = make_anchor(50.0, scene::lane_center(road, 0), 10.0);
        std::vector<scene::Pose> window;
        const double a = 2.0;  // reaches 12 m/s at t = 1
        for (int k = 0; k <= 10; ++k) {
            const double t = 0.1 * k;
            window.push_back({anchor.s + 10.0 * t + 0.5 * a * t * t, anchor.d, t});
        }
        const Tensor planes = encode_action(window, anchor, 4.5, 1.8, spec);
        // topmost occupied cell belongs to the final pose
        int top = -1;
        for (int r = spec.height_cells - 1; r >= 0; --r)
            if (plane_at(planes, 0, r, 16) == 1.0) {
                top = r;
                break;
            }
        REQUIRE(top > 64);
        CHECK(plane_at(planes, 1, top, 16) == Catch::Approx(2.0 / 24.0).margin(1e-9));
    }
    SECTION("empty window is a domain error") {
        const auto anchor = make_anchor(0, 1.85);
        CHECK_THROWS_AS(encode_action(std::span<const scene::Pose>{}, anchor, 4.5, 1.8, spec),
                        DomainError);
    }
}

TEST_CASE("ego-centering and shift equivariance") {
    GridSpec spec;
    scene::RoadSpec road;
    Rng rng(3);
    // quarter-meter lattice keeps the translation arithmetic exact in doubles
    const auto lattice = [&rng](double lo, double hi) {
        return 0.25 * std::floor(rng.uniform(lo, hi) * 4.0);
    };
    for (int trial = 0; trial < 20; ++trial) {
        const auto anchor = make_anchor(lattice(0, 500), scene::lane_center(road, 1), rng.uniform(0, 20));
        std::vector<scene::Pose> window{{anchor.s, anchor.d, 0.0}};
        std::vector<std::array<double, 2>> vel{{anchor.v_s, anchor.v_d}};
        const Tensor planes = encode_action(window, vel, anchor, 4.5, 1.8, spec);
        CHECK(plane_at(planes, 0, 64, 16) == 1.0);  // anchor pose always at the center cell

        // translate everything by the same offset: identical image
        const double ds = lattice(-100, 100);
        scene::VehicleState nb = anchor;
        nb.s += lattice(5, 20);
        nb.v_s += rng.uniform(-5, 5);
        const std::vector<scene::VehicleState> nbs{nb};
        const Tensor a = encode_state(nbs, road, anchor, spec);
        auto anchor2 = anchor;
        anchor2.s += ds;
        auto nb2 = nb;
        nb2.s += ds;
        const std::vector<scene::VehicleState> nbs2{nb2};
        const Tensor b = encode_state(nbs2, road, anchor2, spec);
        CHECK(a.data == b.data);
    }
}

TEST_CASE("velocity channels are masked by occupancy") {
    GridSpec spec;
    spec.resolution = 1.0;
    spec.width_cells = 16;
    spec.height_cells = 64;
    scene::RoadSpec road;
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const auto anchor = make_anchor(rng.uniform(0, 100), rng.uniform(0.5, 10.5), rng.uniform(0, 20));
        std::vector<scene::VehicleState> nbs;
        for (int i = 0; i < 5; ++i) {
            auto nb = make_anchor(anchor.s + rng.uniform(-40, 40), rng.uniform(-1, 12),
                                  rng.uniform(0, 20), rng.uniform(-1, 1));
            nbs.push_back(nb);
        }
        const Tensor planes = encode_state(nbs, road, anchor, spec);
        for (int r = 0; r < spec.height_cells; ++r)
            for (int c = 0; c < spec.width_cells; ++c)
                if (plane_at(planes, 0, r, c) == 0.0) {
                    CHECK(plane_at(planes, 1, r, c) == 0.0);
                    CHECK(plane_at(planes, 2, r, c) == 0.0);
                }
    }
}

TEST_CASE("render_pgm output") {
    const auto dir = std::filesystem::temp_directory_path() / "cil_ogm_test";
    std::filesystem::create_directories(dir);
    const std::string stem = (dir / "img").string();

    Tensor planes({1, 4, 4});
    SECTION("all-zero plane maps to uniform 0") {
        render_pgm(planes, stem);
        const auto bytes = slurp(stem + "_plane0.pgm");
        const auto header_end = bytes.find("255\n") + 4;
        for (std::size_t i = header_end; i < bytes.size(); ++i) CHECK(bytes[i] == 0);
    }
    SECTION("binary plane maps to {0,255} and re-rendering is byte-identical") {
        planes.data[0] = 1.0;
        planes.data[5] = 1.0;
        render_pgm(planes, stem);
        const auto first = slurp(stem + "_plane0.pgm");
        CHECK(first.find('\xff') != std::string::npos);
        render_pgm(planes, stem);
        CHECK(slurp(stem + "_plane0.pgm") == first);
    }
}
