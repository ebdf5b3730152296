#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <sstream>

#include "cil/density.hpp"

using namespace cil;
using namespace cil::density;
using cil::neural::Tensor;

namespace {

VaeModel tiny_vae(std::uint64_t seed) { return make_vae(Backbone::Mlp, 2, 4, 2, 8, 3, seed); }

Tensor random_image(Rng& rng, std::int64_t c = 2, std::int64_t h = 4, std::int64_t w = 2) {
    Tensor x({c, h, w});
    for (auto& v : x.data) v = rng.uniform01() < 0.8 ? 0.0 : 1.0;
    return x;
}

/// Monte-Carlo KL(q || N(0,I)) =~ E_q[log q(z) - log p(z)] with z drawn from q.
double kl_monte_carlo(std::span<const double> mu, std::span<const double> log_var, std::size_t samples,
                      std::uint64_t seed) {
    Rng rng(seed);
    double acc = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        for (std::size_t j = 0; j < mu.size(); ++j) {
            const double eps = rng.normal();
            const double z = mu[j] + std::exp(0.5 * log_var[j]) * eps;
            acc += 0.5 * (z * z - log_var[j] - eps * eps);
        }
    }
    return acc / static_cast<double>(samples);
}

}  // namespace

TEST_CASE("closed-form KL special values") {
    const std::vector<double> zero4(4, 0.0);
    CHECK(kl_closed_form(zero4, zero4) == 0.0);
    std::vector<double> mu{1.0, 0.0, 0.0, 0.0};
    CHECK(kl_closed_form(mu, zero4) == Catch::Approx(0.5));
}

TEST_CASE("closed-form KL agrees with a Monte-Carlo estimate within 2%") {
    Rng rng(13);
    for (int trial = 0; trial < 3; ++trial) {
        std::vector<double> mu(4), lv(4);
        for (auto& v : mu) v = rng.uniform(-1.5, 1.5);
        for (auto& v : lv) v = rng.uniform(-1.0, 1.0);
        const double exact = kl_closed_form(mu, lv);
        const double mc = kl_monte_carlo(mu, lv, 1000000, 100 + trial);
        CHECK(std::abs(mc - exact) / exact < 0.02);
    }
}

TEST_CASE("KL is nonnegative and zero only at the standard normal") {
    Rng rng(17);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> mu(6), lv(6);
        for (auto& v : mu) v = rng.uniform(-3, 3);
        for (auto& v : lv) v = rng.uniform(-3, 3);
        const double kl = kl_closed_form(mu, lv);
        CHECK(kl >= 0.0);
        double mag = 0.0;
        for (int j = 0; j < 6; ++j) mag += std::abs(mu[j]) + std::abs(lv[j]);
        if (mag > 1e-6) CHECK(kl > 0.0);
    }
}

TEST_CASE("vae_loss KL term follows the encoder statistics") {
    auto vae = tiny_vae(21);
    // zero the encoder output layer: mu = 0, log_var = 0 for every input
    auto& out_layer = vae.encoder.params[3];
    std::fill(out_layer[0].data.begin(), out_layer[0].data.end(), 0.0);
    std::fill(out_layer[1].data.begin(), out_layer[1].data.end(), 0.0);
    Rng rng(5);
    const Tensor x = random_image(rng);
    SECTION("standard-normal posterior has zero KL") {
        const auto r = vae_loss(vae, x, 1.0, 9);
        CHECK(r.parts.kl == 0.0);
    }
    SECTION("unit mean in one coordinate gives KL = 0.5") {
        out_layer[1].data[0] = 1.0;  // bias: mu_0 = 1
        const auto r = vae_loss(vae, x, 1.0, 9);
        CHECK(r.parts.kl == Catch::Approx(0.5));
    }
}

TEST_CASE("vae_loss gradients pass a finite-difference check") {
    auto vae = tiny_vae(31);
    Rng rng(7);
    const Tensor x = random_image(rng);
    const double beta = 0.7;
    const std::uint64_t noise_seed = 1234;  // fixed reparameterization noise
    const auto res = vae_loss(vae, x, beta, noise_seed);
    const auto loss_only = [&]() { return vae_loss(vae, x, beta, noise_seed).loss; };
    const double err = neural::grad_check({&vae.encoder, &vae.decoder},
                                          {res.encoder_grads, res.decoder_grads}, loss_only, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("beta schedule") {
    BetaSchedule s{200, 0.5, 0.8};
    CHECK(beta_at(s, 0) == 0.0);
    CHECK(beta_at(s, 100) == Catch::Approx(0.8));  // end of ramp
    CHECK(beta_at(s, 150) == Catch::Approx(0.8));  // plateau
    CHECK(beta_at(s, 200) == 0.0);                 // new cycle
    Rng rng(3);
    for (int i = 0; i < 100000; ++i) {
        const auto step = static_cast<std::int64_t>(rng.below(1000000));
        const double b = beta_at(s, step);
        CHECK(b >= 0.0);
        CHECK(b <= s.beta_max);
    }
}

TEST_CASE("training on one repeated image memorizes it") {
    auto vae = tiny_vae(41);
    Rng rng(11);
    const Tensor x = random_image(rng);
    const double initial = recon_error(vae, x);
    std::vector<Tensor> data{x};
    train_vae(vae, data, 200, BetaSchedule{100, 0.5, 0.02}, 1e-2, 1, 77);
    const double trained = recon_error(vae, x);
    CHECK(trained < 0.1 * initial);
}

TEST_CASE("zero epochs leave the model unchanged") {
    auto vae = tiny_vae(43);
    const auto before = vae.encoder.params;
    Rng rng(12);
    std::vector<Tensor> data{random_image(rng)};
    train_vae(vae, data, 0, BetaSchedule{}, 1e-3, 1, 7);
    CHECK(vae.encoder.params[1][0].data == before[1][0].data);
}

TEST_CASE("training is deterministic for a fixed seed") {
    Rng rng(19);
    std::vector<Tensor> data;
    for (int i = 0; i < 8; ++i) data.push_back(random_image(rng));
    const auto run = [&]() {
        auto vae = tiny_vae(45);
        train_vae(vae, data, 5, BetaSchedule{50, 0.5, 0.3}, 1e-3, 4, 99);
        std::stringstream ss;
        save_vae(ss, vae);
        return ss.str();
    };
    CHECK(run() == run());
}

TEST_CASE("recon_error is deterministic and zero for an exact reconstruction") {
    auto vae = tiny_vae(51);
    // all-zero parameters: encoder maps the zero image to mu=0 and the decoder
    // maps it back to the zero image, an exact reconstruction
    for (auto& lp : vae.encoder.params)
        for (auto& t : lp) std::fill(t.data.begin(), t.data.end(), 0.0);
    for (auto& lp : vae.decoder.params)
        for (auto& t : lp) std::fill(t.data.begin(), t.data.end(), 0.0);
    Tensor zero({2, 4, 2});
    CHECK(recon_error(vae, zero) == 0.0);
    Rng rng(3);
    auto vae2 = tiny_vae(52);
    const Tensor x = random_image(rng);
    CHECK(recon_error(vae2, x) == recon_error(vae2, x));
}

TEST_CASE("threshold calibration quantiles") {
    auto vae = tiny_vae(61);
    Rng rng(23);
    std::vector<Tensor> calib;  // continuous values keep the 1000 errors distinct
    for (int i = 0; i < 1000; ++i) {
        Tensor x({2, 4, 2});
        for (auto& v : x.data) v = rng.uniform01();
        calib.push_back(std::move(x));
    }
    std::vector<double> errors;
    errors.reserve(calib.size());
    for (const auto& x : calib) errors.push_back(recon_error(vae, x));

    SECTION("quantile 1.0 flags nothing on the calibration set") {
        const auto th = calibrate_threshold(vae, calib, 1.0);
        for (double e : errors) CHECK_FALSE(is_low_density(th, e));
    }
    SECTION("quantile 0.0 flags everything above the minimum") {
        const auto th = calibrate_threshold(vae, calib, 0.0);
        const double lo = *std::min_element(errors.begin(), errors.end());
        CHECK(th.e_th == lo);
        for (double e : errors)
            if (e > lo) CHECK(is_low_density(th, e));
    }
    SECTION("quantile 0.95 on 1000 errors leaves exactly 50 above") {
        const auto th = calibrate_threshold(vae, calib, 0.95);
        // sort-based oracle
        auto sorted = errors;
        std::sort(sorted.begin(), sorted.end());
        CHECK(th.e_th == sorted[949]);
        std::size_t above = 0;
        for (double e : errors) above += is_low_density(th, e) ? 1 : 0;
        CHECK(above == 50);
    }
}

TEST_CASE("vae checkpoint file round trip") {
    auto vae = tiny_vae(71);
    const auto path = std::filesystem::temp_directory_path() / "cil_vae_test.ckpt";
    save_vae_file(path.string(), vae);
    const auto loaded = load_vae_file(path.string());
    CHECK(loaded.latent_dim == vae.latent_dim);
    CHECK(loaded.encoder.params[1][0].data == vae.encoder.params[1][0].data);
    CHECK(loaded.decoder.params[2][0].data == vae.decoder.params[2][0].data);
}
