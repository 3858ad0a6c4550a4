#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "diffshield/diffusion.hpp"
#include "diffshield/rng.hpp"

using namespace diffshield;

namespace {

DiffusionDenoiser<double> tiny_denoiser(std::uint64_t seed) {
    DiffusionDenoiser<double> den;
    den.cfg.width = 8;
    den.cfg.heads = 2;
    den.cfg.ffn_mult = 2;
    den.cfg.max_len = 4;
    den.cfg.dropout = 0.0;
    den.cfg.init_std = 0.3;
    Rng rng(seed);
    den.init(rng);
    return den;
}

TensorT<double> randn_like(Rng& rng, const std::vector<int>& shape) {
    TensorT<double> t(shape);
    rng.fill_gaussian(t);
    return t;
}

}  // namespace

TEST(schedule, linear_grid_endpoints_and_monotonicity) {
    auto s = linear_schedule(30, 1e-4, 0.02);
    EXPECT_DOUBLE_EQ(s.beta_at(1), 1e-4);
    EXPECT_DOUBLE_EQ(s.beta_at(30), 0.02);
    for (int t = 2; t <= 30; ++t) EXPECT_GT(s.beta_at(t), s.beta_at(t - 1));
    for (int t = 1; t <= 30; ++t) EXPECT_DOUBLE_EQ(s.alpha_at(t), 1.0 - s.beta_at(t));
    auto one = linear_schedule(1, 1e-4, 0.02);
    EXPECT_DOUBLE_EQ(one.beta_at(1), 1e-4);
}

TEST(schedule, alpha_bar_matches_naive_product) {
    for (int T : {1, 10, 30}) {
        auto s = linear_schedule(T, 1e-4, 0.02);
        long double prod = 1.0L;
        for (int t = 1; t <= T; ++t) {
            // independent recomputation of the grid and the running product
            long double b = (T == 1) ? 1e-4L
                                     : 1e-4L + (0.02L - 1e-4L) * static_cast<long double>(t - 1) /
                                                   static_cast<long double>(T - 1);
            prod *= (1.0L - b);
            EXPECT_NEAR(s.alpha_bar_at(t), static_cast<double>(prod), 1e-12) << "T=" << T << " t=" << t;
        }
    }
}

TEST(schedule, sigma_squared_equals_beta) {
    for (int T : {1, 10, 30}) {
        auto s = linear_schedule(T, 1e-4, 0.02);
        for (int t = 1; t <= T; ++t) {
            double b = s.beta_at(t);
            double sg = s.sigma_at(t);
            // sigma is sqrt(beta) by definition; the square round-trips within 1 ulp
            EXPECT_EQ(sg, std::sqrt(b));
            double sq = sg * sg;
            EXPECT_LE(std::abs(sq - b), std::abs(std::nextafter(b, 2.0 * b) - b));
        }
    }
}

TEST(schedule, rejects_bad_arguments_and_timesteps) {
    EXPECT_THROW(linear_schedule(0, 1e-4, 0.02), std::invalid_argument);
    EXPECT_THROW(linear_schedule(10, 0.0, 0.02), std::invalid_argument);
    EXPECT_THROW(linear_schedule(10, 0.02, 1e-4), std::invalid_argument);
    EXPECT_THROW(linear_schedule(10, 1e-4, 1.0), std::invalid_argument);
    auto s = linear_schedule(10, 1e-4, 0.02);
    EXPECT_THROW(s.beta_at(0), std::out_of_range);
    EXPECT_THROW(s.beta_at(11), std::out_of_range);
}

TEST(forward_noising, monte_carlo_moments_match_theory) {
    auto s = linear_schedule(30, 1e-4, 0.02);
    const int t = 20;
    const double ab = s.alpha_bar_at(t);
    const int n = 100000;
    TensorT<double> h({1, 4});
    h.data = {1.0, -2.0, 0.5, 3.0};
    Rng rng(424242);
    std::vector<double> sum(4, 0.0), sumsq(4, 0.0);
    TensorT<double> eps({1, 4});
    for (int i = 0; i < n; ++i) {
        rng.fill_gaussian(eps);
        auto ht = add_noise(h, t, eps, s);
        for (int j = 0; j < 4; ++j) {
            sum[static_cast<std::size_t>(j)] += ht.data[static_cast<std::size_t>(j)];
            sumsq[static_cast<std::size_t>(j)] += ht.data[static_cast<std::size_t>(j)] * ht.data[static_cast<std::size_t>(j)];
        }
    }
    for (int j = 0; j < 4; ++j) {
        double mean = sum[static_cast<std::size_t>(j)] / n;
        double var = sumsq[static_cast<std::size_t>(j)] / n - mean * mean;
        double mean_ref = std::sqrt(ab) * h.data[static_cast<std::size_t>(j)];
        double var_ref = 1.0 - ab;
        EXPECT_NEAR(mean, mean_ref, 0.02 * std::abs(mean_ref)) << "element " << j;
        EXPECT_NEAR(var, var_ref, 0.02 * var_ref) << "element " << j;
    }
}

TEST(reverse_step, exact_recovery_at_t1) {
    auto s = linear_schedule(30, 1e-4, 0.02);
    Rng rng(77);
    TensorT<double> empty_z;
    for (int pair = 0; pair < 100; ++pair) {
        auto h = randn_like(rng, {3, 6});
        auto eps = randn_like(rng, {3, 6});
        auto h1 = add_noise(h, 1, eps, s);
        TensorT<double> rec;
        reverse_step(h1, 1, eps, s, empty_z, rec);
        for (std::size_t i = 0; i < h.size(); ++i)
            ASSERT_NEAR(rec.data[i], h.data[i], 1e-10) << "pair " << pair;
    }
}

TEST(reverse_step, sigma_term_uses_injected_noise) {
    auto s = linear_schedule(30, 1e-4, 0.02);
    Rng rng(5);
    auto h = randn_like(rng, {2, 4});
    auto eps = randn_like(rng, {2, 4});
    auto z = randn_like(rng, {2, 4});
    TensorT<double> without, with, empty_z;
    reverse_step(h, 7, eps, s, empty_z, without);
    reverse_step(h, 7, eps, s, z, with);
    double sig = s.sigma_at(7);
    for (std::size_t i = 0; i < h.size(); ++i)
        EXPECT_DOUBLE_EQ(with.data[i], without.data[i] + sig * z.data[i]);
}

TEST(inference_config, validates_bounds) {
    auto s = linear_schedule(10, 1e-4, 0.02);
    InferenceConfig icfg;
    icfg.t_prime = 11;
    EXPECT_THROW(icfg.validate(s), std::invalid_argument);
    icfg.t_prime = 0;
    EXPECT_THROW(icfg.validate(s), std::invalid_argument);
    icfg.t_prime = 5;
    icfg.k = 0;
    EXPECT_THROW(icfg.validate(s), std::invalid_argument);
}

TEST(ensemble, deterministic_given_seed) {
    auto den = tiny_denoiser(9);
    auto s = linear_schedule(30, 1e-4, 0.02);
    Rng data_rng(31);
    auto h = randn_like(data_rng, {4, 8});
    Mask mask{1, 1, 1, 0};
    for (int j = 0; j < 8; ++j) h.row(3)[j] = 0.0;
    InferenceConfig icfg;
    icfg.t_prime = 5;
    icfg.k = 3;
    EnsembleScratch<double> sc1, sc2;
    Rng r1(123), r2(123);
    auto y1 = denoise_ensemble(h, mask, den, s, icfg, r1, sc1);
    auto y2 = denoise_ensemble(h, mask, den, s, icfg, r2, sc2);
    EXPECT_EQ(y1.data, y2.data);
    Rng r3(124);
    EnsembleScratch<double> sc3;
    auto y3 = denoise_ensemble(h, mask, den, s, icfg, r3, sc3);
    EXPECT_NE(y1.data, y3.data);
}

TEST(ensemble, time_table_matches_per_step_computation) {
    auto den = tiny_denoiser(10);
    auto s = linear_schedule(30, 1e-4, 0.02);
    auto table = build_time_table(den, s);
    ASSERT_EQ(table.size(), 30u);
    Rng data_rng(32);
    auto h = randn_like(data_rng, {4, 8});
    Mask mask{1, 1, 1, 1};
    InferenceConfig icfg;
    icfg.t_prime = 5;
    icfg.k = 2;
    EnsembleScratch<double> sc1, sc2;
    Rng r1(55), r2(55);
    auto y1 = denoise_ensemble(h, mask, den, s, icfg, r1, sc1);
    auto y2 = denoise_ensemble(h, mask, den, s, icfg, r2, sc2, &table);
    EXPECT_EQ(y1.data, y2.data);
}

TEST(ensemble, k1_t1_matches_manual_chain) {
    auto den = tiny_denoiser(11);
    auto s = linear_schedule(30, 1e-4, 0.02);
    Rng data_rng(33);
    auto h = randn_like(data_rng, {4, 8});
    Mask mask{1, 1, 0, 0};
    for (int i = 2; i < 4; ++i)
        for (int j = 0; j < 8; ++j) h.row(i)[j] = 0.0;
    InferenceConfig icfg;
    icfg.t_prime = 1;
    icfg.k = 1;  // zero_final_z suppresses the only z draw
    EnsembleScratch<double> sc;
    Rng r(99);
    auto got = denoise_ensemble(h, mask, den, s, icfg, r, sc);

    Rng rm(99);
    TensorT<double> eps(h.shape);
    rm.fill_gaussian(eps);
    auto h1 = add_noise(h, 1, eps, s);
    DenFwd<double> fw;
    den.predict_noise(h1, 1, mask, false, nullptr, fw);
    TensorT<double> manual, empty_z;
    reverse_step(h1, 1, fw.eps_hat, s, empty_z, manual);
    EXPECT_EQ(got.data, manual.data);
}

TEST(ensemble, noise_with_tprime_changes_initial_level) {
    auto den = tiny_denoiser(12);
    auto s = linear_schedule(30, 1e-4, 0.02);
    Rng data_rng(34);
    auto h = randn_like(data_rng, {4, 8});
    Mask mask{1, 1, 1, 1};
    InferenceConfig icfg;
    icfg.t_prime = 5;
    icfg.k = 1;
    icfg.use_sigma = false;
    Rng r1(7), r2(7);
    EnsembleScratch<double> sc1, sc2;
    auto base = denoise_ensemble(h, mask, den, s, icfg, r1, sc1);
    auto base_copy = base.data;
    icfg.noise_with_tprime = true;
    auto stronger = denoise_ensemble(h, mask, den, s, icfg, r2, sc2);
    EXPECT_NE(base_copy, stronger.data);

    // manual replication of the noise_with_tprime start at alpha_bar(t')
    Rng rm(7);
    TensorT<double> eps(h.shape);
    rm.fill_gaussian(eps);
    auto state = add_noise(h, icfg.t_prime, eps, s);
    DenFwd<double> fw;
    TensorT<double> next, empty_z;
    for (int i = 0; i < icfg.t_prime; ++i) {
        int t = icfg.t_prime - i;
        den.predict_noise(state, t, mask, false, nullptr, fw);
        reverse_step(state, t, fw.eps_hat, s, empty_z, next);
        state = next;
    }
    EXPECT_EQ(stronger.data, state.data);
}

TEST(ensemble, use_sigma_false_drops_intermediate_noise_draws) {
    auto den = tiny_denoiser(13);
    auto s = linear_schedule(30, 1e-4, 0.02);
    Rng data_rng(35);
    auto h = randn_like(data_rng, {4, 8});
    Mask mask{1, 1, 1, 1};
    InferenceConfig icfg;
    icfg.t_prime = 4;
    icfg.k = 1;
    icfg.use_sigma = false;
    Rng r(21);
    EnsembleScratch<double> sc;
    denoise_ensemble(h, mask, den, s, icfg, r, sc);
    // all randomness consumed was the single initial eps
    Rng ref(21);
    TensorT<double> eps(h.shape);
    ref.fill_gaussian(eps);
    EXPECT_TRUE(r.gen == ref.gen);
    EXPECT_EQ(r.have_spare, ref.have_spare);
}

TEST(ensemble, averages_over_chains) {
    auto den = tiny_denoiser(14);
    auto s = linear_schedule(30, 1e-4, 0.02);
    Rng data_rng(36);
    auto h = randn_like(data_rng, {4, 8});  // row count must equal denoiser max_len
    Mask mask{1, 1, 1, 1};
    InferenceConfig icfg;
    icfg.t_prime = 1;
    icfg.k = 3;
    Rng r(888);
    EnsembleScratch<double> sc;
    auto got = denoise_ensemble(h, mask, den, s, icfg, r, sc);

    // replicate: k initial noises drawn first, then chains run in order
    Rng rm(888);
    std::vector<TensorT<double>> eps(3);
    for (auto& e : eps) {
        e = TensorT<double>(std::vector<int>{4, 8});
        rm.fill_gaussian(e);
    }
    TensorT<double> avg(std::vector<int>{4, 8});
    DenFwd<double> fw;
    for (int c = 0; c < 3; ++c) {
        auto h1 = add_noise(h, 1, eps[static_cast<std::size_t>(c)], s);
        den.predict_noise(h1, 1, mask, false, nullptr, fw);
        TensorT<double> out, empty_z;
        reverse_step(h1, 1, fw.eps_hat, s, empty_z, out);
        for (std::size_t i = 0; i < avg.size(); ++i) avg.data[i] += out.data[i] / 3.0;
    }
    for (std::size_t i = 0; i < avg.size(); ++i) EXPECT_NEAR(got.data[i], avg.data[i], 1e-12);
}
