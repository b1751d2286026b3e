// End-to-end behavior of trained amortizers at production scale. Training is
// expensive, so each network is trained once in a lazy singleton and shared
// across test cases; every consumer reads, none mutates.
#include <unistd.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "flowinfer/diagnostics.hpp"
#include "flowinfer/workflow.hpp"

using namespace flowinfer;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path scratch_dir() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() /
                     ("flowinfer_integration_" + std::to_string(::getpid()));
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

Tensor one_set(const GenerativeModel& model, Rng& rng, Tensor* theta = nullptr) {
    SimulationBatch b = sample_batch(model, 1, rng);
    if (theta)
        *theta = Tensor({b.params.shape[1]},
                        std::vector<float>(b.params.data.begin(), b.params.data.end()));
    return Tensor({b.data.shape[1], b.data.shape[2]},
                  std::vector<float>(b.data.data.begin(), b.data.data.end()));
}

struct Moments {
    std::vector<double> mean, sd;
};

Moments column_moments(const Tensor& draws) {
    Moments m;
    const int n = draws.rows(), d = draws.cols();
    for (int j = 0; j < d; ++j) {
        double mu = 0.0;
        for (int i = 0; i < n; ++i) mu += draws.at(i, j);
        mu /= n;
        double ss = 0.0;
        for (int i = 0; i < n; ++i) {
            const double c = draws.at(i, j) - mu;
            ss += c * c;
        }
        m.mean.push_back(mu);
        m.sd.push_back(std::sqrt(ss / n));
    }
    return m;
}

// The conjugate posterior amortizer is trained through the CLI so the whole
// train pipeline (config parse, seeding, checkpoint, history export) is on the
// hook; everything else in this file then drives the loaded network directly.
struct TrainedPosterior {
    GenerativeModel model = builtin_model("conjugate_gaussian");
    NetworkConfig net;
    std::unique_ptr<PosteriorAmortizer> am;
    fs::path out;
    std::vector<double> val_loss;
    double train_seconds = 0.0;

    TrainedPosterior() {
        net.n_coupling = 6;
        net.coupling_hidden = {128, 128};
        out = scratch_dir() / "conjugate_posterior";
        const fs::path cfg = scratch_dir() / "conjugate_posterior.json";
        {
            std::ofstream os(cfg);
            os << R"({
  "model": "conjugate_gaussian",
  "amortizer": "posterior",
  "seed": 21,
  "network": {"embedding_dim": 8, "phi_hidden": [64, 64], "rho_hidden": [64],
              "n_coupling": 6, "coupling_hidden": [128, 128]},
  "train": {"epochs": 64, "batches_per_epoch": 100, "batch_size": 64, "lr": 1e-3,
            "calibration_size": 10000, "validation_size": 500}
})";
        }
        const auto t0 = Clock::now();
        REQUIRE(run_command({"train", "--config", cfg.string(), "--out", out.string()}) == 0);
        train_seconds = seconds_since(t0);

        std::ifstream hist(out / "history.csv");
        std::string line;
        std::getline(hist, line);  // header
        while (std::getline(hist, line)) {
            if (line.rfind("val_loss,", 0) != 0) continue;
            const auto comma = line.rfind(',');
            val_loss.push_back(std::strtod(line.c_str() + comma + 1, nullptr));
        }

        Rng unused(0);
        am = std::make_unique<PosteriorAmortizer>(model, posterior_config(net), unused);
        am->load_state(load_checkpoint((out / "checkpoint.bin").string()));
    }
};

const TrainedPosterior& trained_posterior() {
    static TrainedPosterior t;
    return t;
}

const LikelihoodAmortizer& trained_likelihood() {
    static auto holder = [] {
        const GenerativeModel model = builtin_model("conjugate_gaussian");
        LikelihoodConfig cfg;
        Rng init = Rng(22).split(200);
        auto am = std::make_unique<LikelihoodAmortizer>(model, cfg, init);
        TrainConfig tc;
        tc.epochs = 6;
        tc.batches_per_epoch = 100;
        tc.batch_size = 32;
        tc.initial_lr = 1e-3;
        tc.calibration_size = 4000;
        tc.validation_size = 200;
        tc.seed = 22;
        train(*am, model, tc);
        return am;
    }();
    return *holder;
}

const LikelihoodAmortizer& meanvar_likelihood() {
    static auto holder = [] {
        const GenerativeModel model = builtin_model("gaussian_meanvar");
        LikelihoodConfig cfg;
        Rng init = Rng(23).split(200);
        auto am = std::make_unique<LikelihoodAmortizer>(model, cfg, init);
        TrainConfig tc;
        tc.epochs = 10;
        tc.batches_per_epoch = 100;
        tc.batch_size = 32;
        tc.initial_lr = 1e-3;
        tc.calibration_size = 4000;
        tc.validation_size = 200;
        tc.seed = 23;
        train(*am, model, tc);
        return am;
    }();
    return *holder;
}

const ComparisonAmortizer& trained_comparison() {
    static auto holder = [] {
        const GenerativeModel model = builtin_model("model_pair");
        ComparisonConfig cfg;
        Rng init = Rng(24).split(200);
        auto am = std::make_unique<ComparisonAmortizer>(model, cfg, init);
        TrainConfig tc;
        tc.epochs = 8;
        tc.batches_per_epoch = 50;
        tc.batch_size = 32;
        tc.initial_lr = 1e-3;
        tc.calibration_size = 2000;
        tc.validation_size = 200;
        tc.seed = 24;
        train(*am, model, tc);
        return am;
    }();
    return *holder;
}

const Tensor kEmptyContext = Tensor::zeros({0});

}  // namespace

TEST_CASE("training through the cli drops validation loss by over a nat") {
    const TrainedPosterior& t = trained_posterior();
    REQUIRE(t.val_loss.size() == 64);

    // baseline: a freshly initialized network of the same shape on held-out sets
    Rng init = Rng(21).split(200);
    PosteriorAmortizer fresh(t.model, posterior_config(t.net), init);
    Rng calib(901);
    fresh.prepare(t.model, 2000, calib);
    Rng val(902);
    double untrained = 0.0;
    for (int i = 0; i < 4; ++i) untrained += fresh.loss_value(sample_batch(t.model, 64, val)) / 4;

    CHECK(untrained - t.val_loss.back() >= 1.0);
    CHECK(t.val_loss.back() < t.val_loss.front());
}

TEST_CASE("trained posterior matches analytic moments across set sizes") {
    const TrainedPosterior& t = trained_posterior();
    for (int n : {4, 16, 64}) {
        CAPTURE(n);
        const GenerativeModel fixed = with_set_size(t.model, n);
        Rng rng(500 + n);
        double mean_err = 0.0, sd_err = 0.0;
        for (int s = 0; s < 100; ++s) {
            Tensor set = one_set(fixed, rng);
            Moments m = column_moments(posterior_sample(*t.am, set, kEmptyContext, 1000, rng));
            ConjugatePosterior post = conjugate_gaussian_posterior(set);
            for (int j = 0; j < 2; ++j) {
                mean_err += std::abs(m.mean[j] - post.mean.at(j)) / 200.0;
                sd_err += std::abs(m.sd[j] - std::sqrt(post.variance)) / 200.0;
            }
        }
        CHECK(mean_err < 0.1);
        CHECK(sd_err < 0.1);
    }
}

TEST_CASE("posterior concentrates correctly on a constructed data set") {
    // four observations of 1.0 in both dims: analytic mean 0.8, sd sqrt(0.2)
    const TrainedPosterior& t = trained_posterior();
    Tensor set({4, 2}, std::vector<float>(8, 1.0f));
    Rng rng(660);
    Moments m = column_moments(posterior_sample(*t.am, set, kEmptyContext, 2000, rng));
    for (int j = 0; j < 2; ++j) {
        CAPTURE(j);
        CHECK(std::abs(m.mean[j] - 0.8) < 0.1);
        CHECK(std::abs(m.sd[j] - std::sqrt(0.2)) < 0.1);
    }
}

TEST_CASE("posterior density agrees with a kernel estimate of its own draws") {
    const TrainedPosterior& t = trained_posterior();
    Rng rng(630);
    Tensor set = one_set(with_set_size(t.model, 16), rng);
    Tensor draws = posterior_sample(*t.am, set, kEmptyContext, 4000, rng);
    Moments m = column_moments(draws);

    const int n = draws.rows(), d = draws.cols();
    const double factor = std::pow(4.0 / ((d + 2.0) * n), 1.0 / (d + 4.0));
    double kde = 0.0;
    for (int i = 0; i < n; ++i) {
        double k = 1.0;
        for (int j = 0; j < d; ++j) {
            const double h = m.sd[j] * factor;
            const double u = (m.mean[j] - draws.at(i, j)) / h;
            k *= std::exp(-0.5 * u * u) / (h * std::sqrt(2.0 * 3.14159265358979323846));
        }
        kde += k;
    }
    kde /= n;

    Tensor point({d}, {static_cast<float>(m.mean[0]), static_cast<float>(m.mean[1])});
    const double q = std::exp(posterior_log_prob(*t.am, set, kEmptyContext, point));
    CHECK(q / kde > 0.8);
    CHECK(q / kde < 1.25);
}

TEST_CASE("cli sampling on exported data reproduces the analytic posterior") {
    const TrainedPosterior& t = trained_posterior();
    const GenerativeModel m16 = with_set_size(t.model, 16);
    Rng rng(680);
    SimulationBatch batch = sample_batch(m16, 20, rng);
    const fs::path data = scratch_dir() / "sets16.csv";
    {
        std::ofstream os(data, std::ios::binary);
        export_batch_csv(batch, os);
    }
    const fs::path out = scratch_dir() / "cli_sample";
    REQUIRE(run_command({"sample", "--config",
                         (scratch_dir() / "conjugate_posterior.json").string(), "--data",
                         data.string(), "--checkpoint", (t.out / "checkpoint.bin").string(),
                         "--n-draws", "500", "--out", out.string()}) == 0);

    std::ifstream in(out / "posterior_draws.csv");
    std::string line;
    std::getline(in, line);
    REQUIRE(line == "dataset,draw,param_0,param_1");
    std::vector<std::vector<std::array<double, 2>>> per_set(20);
    while (std::getline(in, line)) {
        int set_i = 0, draw_i = 0;
        double p0 = 0.0, p1 = 0.0;
        REQUIRE(std::sscanf(line.c_str(), "%d,%d,%lf,%lf", &set_i, &draw_i, &p0, &p1) == 4);
        per_set.at(set_i).push_back({p0, p1});
    }

    double mean_err = 0.0, sd_err = 0.0;
    for (int s = 0; s < 20; ++s) {
        REQUIRE(per_set[s].size() == 500);
        Tensor set({16, 2}, std::vector<float>(batch.data.data.begin() + s * 32,
                                               batch.data.data.begin() + (s + 1) * 32));
        ConjugatePosterior post = conjugate_gaussian_posterior(set);
        for (int j = 0; j < 2; ++j) {
            double mu = 0.0, ss = 0.0;
            for (const auto& q : per_set[s]) mu += q[j];
            mu /= 500;
            for (const auto& q : per_set[s]) ss += (q[j] - mu) * (q[j] - mu);
            mean_err += std::abs(mu - post.mean.at(j)) / 40.0;
            sd_err += std::abs(std::sqrt(ss / 500) - std::sqrt(post.variance)) / 40.0;
        }
    }
    CHECK(mean_err < 0.1);
    CHECK(sd_err < 0.1);
}

TEST_CASE("evidence matches the analytic marginal on held-out sets") {
    const TrainedPosterior& t = trained_posterior();
    const LikelihoodAmortizer& lik = trained_likelihood();
    const GenerativeModel m8 = with_set_size(t.model, 8);
    Rng rng(620);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        Tensor set = one_set(m8, rng);
        const double est = log_evidence(*t.am, lik, t.model, set, kEmptyContext, rng);
        worst = std::max(worst, std::abs(est - conjugate_gaussian_log_marginal(set)));
    }
    CHECK(worst < 0.5);
}

TEST_CASE("evidence is stable across evaluation points") {
    const TrainedPosterior& t = trained_posterior();
    const LikelihoodAmortizer& lik = trained_likelihood();
    Rng rng(621);
    Tensor set = one_set(with_set_size(t.model, 8), rng);
    Moments m = column_moments(posterior_sample(*t.am, set, kEmptyContext, 2000, rng));

    // ten distinct points spread over the central quarter-sd of the posterior
    const double offsets[10][2] = {{0, 0},           {0.25, 0},        {-0.25, 0},
                                   {0, 0.25},        {0, -0.25},       {0.125, 0.125},
                                   {-0.125, -0.125}, {0.125, -0.125},  {-0.125, 0.125},
                                   {0.25, 0.25}};
    double lo = 1e300, hi = -1e300;
    for (const auto& o : offsets) {
        Tensor theta({2}, {static_cast<float>(m.mean[0] + o[0] * m.sd[0]),
                           static_cast<float>(m.mean[1] + o[1] * m.sd[1])});
        const double v = log_evidence_at(*t.am, lik, t.model, set, kEmptyContext, theta);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(hi - lo < 0.3);
}

TEST_CASE("trained likelihood emulates observations with the right mean") {
    const LikelihoodAmortizer& lik = meanvar_likelihood();
    Rng rng(640);
    Tensor theta({2}, {1.0f, 0.0f});  // mean 1, log sigma 0
    Tensor obs = emulate(lik, theta, kEmptyContext, 1000, rng);
    REQUIRE(obs.rows() == 1000);
    double mean = 0.0;
    for (int i = 0; i < 1000; ++i) mean += obs.at(i, 0);
    mean /= 1000;
    CHECK(std::abs(mean - 1.0) < 0.15);
}

TEST_CASE("model comparison separates the candidates on held-out sets") {
    const ComparisonAmortizer& cmp = trained_comparison();
    const GenerativeModel model = builtin_model("model_pair");
    Rng rng(650);
    int correct = 0;
    double worst_sum_dev = 0.0;
    for (int i = 0; i < 200; ++i) {
        Tensor theta;
        Tensor set = one_set(model, rng, &theta);
        Tensor pmp = predict_pmp(cmp, set, kEmptyContext);
        const int truth = theta.at(0) >= 0.5f ? 1 : 0;
        const int pick = pmp.at(1) > pmp.at(0) ? 1 : 0;
        if (pick == truth) ++correct;
        double sum = 0.0;
        for (int k = 0; k < pmp.numel(); ++k) sum += pmp.at(k);
        worst_sum_dev = std::max(worst_sum_dev, std::abs(sum - 1.0));
    }
    CHECK(correct > 180);
    CHECK(worst_sum_dev <= 1e-6);
}

TEST_CASE("diagnostics pass on the trained amortizer inside the time budget") {
    const TrainedPosterior& t = trained_posterior();
    const auto t0 = Clock::now();

    {
        Rng rng(602);
        RecoveryReport rec = recovery(*t.am, with_set_size(t.model, 32), 200, 250, rng);
        const double oracle = std::sqrt(32.0 / 33.0);
        for (int j = 0; j < 2; ++j) {
            CAPTURE(j);
            REQUIRE(rec.correlation[j].has_value());
            CHECK(*rec.correlation[j] > 0.9);
            CHECK(std::abs(*rec.correlation[j] - oracle) < 0.05);
        }
    }
    {
        Rng rng(601);
        SbcResult sbc = sbc_ranks(*t.am, t.model, 500, 100, rng);
        for (int j = 0; j < 2; ++j) {
            CAPTURE(j);
            CHECK(sbc.tests[j].p > 0.01);
        }
    }
    {
        Rng rng(603);
        std::vector<double> c = posterior_contraction(*t.am, with_set_size(t.model, 4), 200, 250, rng);
        for (int j = 0; j < 2; ++j) {
            CAPTURE(j);
            CHECK(std::abs(c[j] - 0.8) < 0.1);
        }
    }
    {
        // data shifted by three marginal standard deviations must be flagged
        Rng rng(604);
        const GenerativeModel m32 = with_set_size(t.model, 32);
        std::vector<Tensor> shifted;
        for (int i = 0; i < 50; ++i) {
            Tensor set = one_set(m32, rng);
            for (auto& v : set.data) v += 3.0f * std::sqrt(2.0f);
            shifted.push_back(set);
        }
        MisspecResult mis = misspecification_test(*t.am, t.model, shifted, 99, 100, rng);
        CHECK(mis.p <= 0.05);
    }
    {
        // data from the model itself stays unflagged
        for (unsigned seed = 700; seed < 710; ++seed) {
            CAPTURE(seed);
            Rng rng(seed);
            std::vector<Tensor> own;
            for (int i = 0; i < 8; ++i) own.push_back(one_set(t.model, rng));
            MisspecResult mis = misspecification_test(*t.am, t.model, own, 19, 16, rng);
            CHECK(mis.p > 0.05);
        }
    }

    CHECK(seconds_since(t0) < 60.0);
}

TEST_CASE("checkpoint reload reproduces sampling bit for bit") {
    const TrainedPosterior& t = trained_posterior();
    Rng unused(0);
    PosteriorAmortizer reloaded(t.model, posterior_config(t.net), unused);
    reloaded.load_state(load_checkpoint((t.out / "checkpoint.bin").string()));

    Rng data_rng(690);
    Tensor set = one_set(with_set_size(t.model, 8), data_rng);
    Rng draws_a(691), draws_b(691);
    Tensor a = posterior_sample(*t.am, set, kEmptyContext, 256, draws_a);
    Tensor b = posterior_sample(reloaded, set, kEmptyContext, 256, draws_b);
    REQUIRE(a.shape == b.shape);
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
}

