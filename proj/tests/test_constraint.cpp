#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "cil/constraint.hpp"

using namespace cil;
using namespace cil::constraint;
using cil::neural::Tensor;

namespace {

density::VaeModel tiny_vae(std::uint64_t seed) {
    return density::make_vae(density::Backbone::Mlp, 2, 4, 2, 8, 3, seed);
}

Tensor random_image(Rng& rng) {
    Tensor x({2, 4, 2});
    for (auto& v : x.data) v = rng.uniform01() < 0.8 ? 0.0 : 1.0;
    return x;
}

Tensor random_batch(Rng& rng, int n) {
    Tensor x({n, 2, 4, 2});
    for (auto& v : x.data) v = rng.uniform01() < 0.8 ? 0.0 : 1.0;
    return x;
}

}  // namespace

TEST_CASE("classify with a constant head") {
    const auto vae = tiny_vae(3);
    Rng rng(5);
    const Tensor x = random_image(rng);
    SECTION("zero weights and bias give 0.5 for every input") {
        auto m = init_from_vae(vae, 0.5);
        m.head.params[0][1].data[0] = 0.0;
        CHECK(classify(m, x) == 0.5);
        CHECK(classify(m, random_image(rng)) == 0.5);
    }
    SECTION("bias -2.1972 gives about 0.1") {
        auto m = init_from_vae(vae, 0.5);
        m.head.params[0][1].data[0] = -2.1972;
        CHECK(classify(m, x) == Catch::Approx(0.1).margin(1e-4));
    }
    SECTION("repeated calls agree exactly") {
        auto m = init_from_vae(vae, 0.3);
        CHECK(classify(m, x) == classify(m, x));
    }
}

TEST_CASE("is_constrained decision rule") {
    const auto vae = tiny_vae(7);
    Rng rng(9);
    const Tensor x = random_image(rng);
    SECTION("exact tie resolves to unconstrained") {
        auto m = init_from_vae(vae, 0.5);
        m.head.params[0][1].data[0] = 0.0;  // classify == 0.5 exactly
        m.decision_threshold = 0.5;
        CHECK_FALSE(is_constrained(m, x));
    }
    SECTION("0.9 against threshold 0.5 is constrained") {
        auto m = init_from_vae(vae, 0.9);
        m.decision_threshold = 0.5;
        CHECK(is_constrained(m, x));
    }
    SECTION("threshold 1.0 never constrains") {
        auto m = init_from_vae(vae, 0.999);
        m.decision_threshold = 1.0;
        CHECK_FALSE(is_constrained(m, x));
    }
}

TEST_CASE("init_from_vae contract") {
    const auto vae = tiny_vae(11);
    Rng rng(13);
    SECTION("classifies at the prior everywhere") {
        for (const double prior : {0.1, 0.5, 0.9}) {
            const auto m = init_from_vae(vae, prior);
            for (int i = 0; i < 5; ++i)
                CHECK(classify(m, random_image(rng)) == Catch::Approx(prior).margin(1e-12));
        }
    }
    SECTION("backbone parameters are copied bitwise") {
        const auto m = init_from_vae(vae, 0.1);
        for (std::size_t i = 0; i < vae.encoder.params.size(); ++i)
            for (std::size_t j = 0; j < vae.encoder.params[i].size(); ++j)
                CHECK(m.backbone.encoder.params[i][j].data == vae.encoder.params[i][j].data);
    }
    SECTION("hidden head still starts at the prior") {
        const auto m = init_from_vae(vae, 0.25, 0.5, 8, 17);
        for (int i = 0; i < 5; ++i)
            CHECK(classify(m, random_image(rng)) == Catch::Approx(0.25).margin(1e-12));
    }
    SECTION("bias prior must be a probability") {
        CHECK_THROWS_AS(init_from_vae(vae, 0.0), DomainError);
        CHECK_THROWS_AS(init_from_vae(vae, 1.0), DomainError);
    }
}

TEST_CASE("constraint_loss values") {
    const auto vae = tiny_vae(19);
    Rng rng(21);
    SECTION("perfect demo classification reduces to the VAE terms") {
        auto m = init_from_vae(vae, 0.5);
        m.head.params[0][1].data[0] = -30.0;  // y ~ 0 on every input
        const Tensor demo = random_batch(rng, 3);
        const auto r = constraint_loss(m, &demo, nullptr, 0.5, 7);
        CHECK(r.parts.bce_demo < 1e-6);
        CHECK(r.parts.bce_planner == 0.0);
        CHECK(r.loss == Catch::Approx(r.parts.rmse + r.parts.kl_term).margin(1e-6));
    }
    SECTION("one planner example at y = 0.5 contributes ln 2") {
        const auto m = init_from_vae(vae, 0.5);
        const Tensor planner = random_batch(rng, 1);
        const auto r = constraint_loss(m, nullptr, &planner, 0.5, 7);
        CHECK(r.parts.bce_planner == Catch::Approx(0.6931).margin(1e-3));
        CHECK(r.parts.rmse == 0.0);
        CHECK(r.parts.kl_term == 0.0);
    }
    SECTION("parts sum to the loss") {
        auto m = init_from_vae(vae, 0.3, 0.5, 4, 23);
        const Tensor demo = random_batch(rng, 4);
        const Tensor planner = random_batch(rng, 2);
        const auto r = constraint_loss(m, &demo, &planner, 0.9, 11);
        const double sum = r.parts.bce_demo + r.parts.bce_planner + r.parts.rmse + r.parts.kl_term;
        CHECK(std::abs(sum - r.loss) <= 1e-12 * std::abs(r.loss));
    }
    SECTION("planner pairs never touch the decoder or the auxiliary terms") {
        const auto m = init_from_vae(vae, 0.4);
        const Tensor planner = random_batch(rng, 3);
        const auto r = constraint_loss(m, nullptr, &planner, 1.0, 7);
        CHECK(r.parts.rmse == 0.0);
        CHECK(r.parts.kl_raw == 0.0);
        for (const auto& lp : r.decoder_grads)
            for (const auto& t : lp)
                for (double g : t.data) CHECK(g == 0.0);
    }
}

TEST_CASE("constraint_loss gradients pass a finite-difference check") {
    auto m = init_from_vae(tiny_vae(29), 0.3);
    Rng rng(31);
    const Tensor demo = random_batch(rng, 2);
    const Tensor planner = random_batch(rng, 2);
    const double beta = 0.6;
    const std::uint64_t noise_seed = 555;
    const auto res = constraint_loss(m, &demo, &planner, beta, noise_seed);
    const auto loss_only = [&]() { return constraint_loss(m, &demo, &planner, beta, noise_seed).loss; };
    const double err = neural::grad_check({&m.backbone.encoder, &m.backbone.decoder, &m.head},
                                          {res.encoder_grads, res.decoder_grads, res.head_grads},
                                          loss_only, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("drivable_region limit cases") {
    const auto vae = tiny_vae(37);
    scene::RoadSpec road;
    scene::VehicleState anchor;
    anchor.s = 100.0;
    anchor.d = scene::lane_center(road, 1);
    anchor.v_s = 10.0;
    ogm::GridSpec grid;
    grid.resolution = 1.0;
    grid.width_cells = 4;
    grid.height_cells = 8;
    OffsetGrid offsets;
    offsets.rows = 4;
    offsets.cols = 3;
    offsets.s_min = -2;
    offsets.s_max = 2;
    offsets.d_min = -1;
    offsets.d_max = 1;

    // the tiny VAE expects 2-channel inputs; build a matching 7-channel model
    auto vae7 = density::make_vae(density::Backbone::Mlp, 7, 8, 4, 8, 3, 37);
    SECTION("threshold 1.0 marks everything drivable") {
        auto m = init_from_vae(vae7, 0.999, 1.0);
        const auto mask = drivable_region(m, {}, road, anchor, grid, offsets);
        CHECK(mask.rows == 4);
        CHECK(mask.cols == 3);
        CHECK(mask.fraction_unconstrained() == 1.0);
    }
    SECTION("a 0.9 prior against threshold 0.5 constrains everything") {
        auto m = init_from_vae(vae7, 0.9, 0.5);
        const auto mask = drivable_region(m, {}, road, anchor, grid, offsets);
        CHECK(mask.fraction_unconstrained() == 0.0);
    }
}

TEST_CASE("checkpoint kind flag distinguishes VAE from constraint models") {
    const auto dir = std::filesystem::temp_directory_path() / "cil_constraint_test";
    std::filesystem::create_directories(dir);
    const auto vae = tiny_vae(41);
    const auto m = init_from_vae(vae, 0.2, 0.6);
    const std::string cpath = (dir / "c.ckpt").string();
    const std::string vpath = (dir / "v.ckpt").string();
    save_constraint_file(cpath, m);
    density::save_vae_file(vpath, vae);

    const auto loaded = load_constraint_file(cpath);
    CHECK(loaded.decision_threshold == 0.6);
    CHECK(loaded.head.params[0][1].data == m.head.params[0][1].data);
    CHECK(loaded.backbone.encoder.params[1][0].data == m.backbone.encoder.params[1][0].data);

    CHECK_THROWS_AS(load_constraint_file(vpath), FormatError);
    CHECK_THROWS_AS(density::load_vae_file(cpath), FormatError);
}
