#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "tcorres/model.hpp"
#include "tcorres/optim.hpp"
#include "tcorres/trainer.hpp"

using namespace tcorres;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string temp_dir(const std::string& name) {
    auto dir = std::filesystem::path(::testing::TempDir()) / name;
    std::filesystem::remove_all(dir);
    return dir.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.M = 16;
    cfg.C = 24;
    cfg.heads = 3;
    cfg.k = 4;
    cfg.L_enc = 2;
    cfg.L_dec = 2;
    cfg.N0 = 32;
    cfg.N3 = 16;
    cfg.N4 = 24;
    cfg.oversample = 2;
    cfg.up_factor = 4;
    cfg.d_s = 8;
    cfg.corres_dim = 16;
    cfg.vote_dim = 16;
    cfg.corres_sample_n = 16;
    cfg.validate();
    return cfg;
}

std::vector<SamplePair<double>> small_data() {
    PrimitiveParams p;
    std::vector<SamplePair<double>> data;
    data.push_back(gen_synthetic_pair<double>(PrimitiveKind::cone, p, 40, 64, 11));
    data.push_back(gen_synthetic_pair<double>(PrimitiveKind::torus, p, 40, 64, 12));
    return data;
}

}  // namespace

TEST(CosineLr, LandmarksAreExact) {
    EXPECT_EQ(cosine_lr(0, 100, 1e-4, 1e-6), 1e-4);
    EXPECT_EQ(cosine_lr(100, 100, 1e-4, 1e-6), 1e-6);
    EXPECT_EQ(cosine_lr(50, 100, 1e-4, 1e-6), 0.5 * (1e-4 + 1e-6));
}

TEST(CosineLr, FollowsTheCosineCurve) {
    const double base = 2e-3, min = 1e-5;
    double want = min + 0.5 * (base - min) * (1.0 + std::cos(kPi * 0.25));
    EXPECT_NEAR(cosine_lr(1, 4, base, min), want, 1e-18);
    for (int64_t s = 1; s <= 10; ++s)
        EXPECT_LT(cosine_lr(s, 10, base, min), cosine_lr(s - 1, 10, base, min));
}

TEST(CosineLr, RejectsBadArguments) {
    EXPECT_THROW(cosine_lr(0, 0, 1e-4, 1e-6), std::invalid_argument);
    EXPECT_THROW(cosine_lr(-1, 10, 1e-4, 1e-6), std::invalid_argument);
    EXPECT_THROW(cosine_lr(11, 10, 1e-4, 1e-6), std::invalid_argument);
}

TEST(AdamOptimizer, MatchesHandRolledUpdates) {
    ParamStore<double> ps;
    auto w = ps.create_zeros("w", {2});
    w.raw_value() = {0.5, -0.3};
    w.set_requires_grad(true);
    auto c = Tensor<double>::from({2}, {0.2, 0.4});

    const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    Adam<double> opt(ps, b1, b2, eps, 1.0);

    std::vector<double> x{0.5, -0.3}, g{0.2, 0.4}, m(2, 0.0), v(2, 0.0);
    for (int t = 1; t <= 5; ++t) {
        ps.zero_grad();
        auto loss = sum_all(mul(w, c));
        loss.backward();
        opt.step(lr);

        const double bc1 = 1.0 - std::pow(b1, t), bc2 = 1.0 - std::pow(b2, t);
        for (int i = 0; i < 2; ++i) {
            m[static_cast<size_t>(i)] = b1 * m[static_cast<size_t>(i)] + (1 - b1) * g[static_cast<size_t>(i)];
            v[static_cast<size_t>(i)] =
                b2 * v[static_cast<size_t>(i)] + (1 - b2) * g[static_cast<size_t>(i)] * g[static_cast<size_t>(i)];
            const double mhat = m[static_cast<size_t>(i)] / bc1;
            const double vhat = v[static_cast<size_t>(i)] / bc2;
            x[static_cast<size_t>(i)] -= lr * mhat / (std::sqrt(vhat) + eps);
            EXPECT_NEAR(w.value()[static_cast<size_t>(i)], x[static_cast<size_t>(i)], 1e-15);
        }
    }
    EXPECT_EQ(opt.steps_taken(), 5u);
}

TEST(AdamOptimizer, FirstStepHasLearningRateMagnitude) {
    ParamStore<double> ps;
    auto w = ps.create_zeros("w", {1});
    w.raw_value() = {2.0};
    w.set_requires_grad(true);
    auto c = Tensor<double>::from({1}, {1.0});

    Adam<double> opt(ps);
    auto loss = sum_all(mul(w, c));
    loss.backward();
    opt.step(1e-4);
    EXPECT_NEAR(2.0 - w.value()[0], 1e-4, 1e-10);
}

TEST(AdamOptimizer, ClipsByGlobalNorm) {
    ParamStore<double> ps;
    auto w = ps.create_zeros("w", {2});
    w.raw_value() = {1.0, 1.0};
    w.set_requires_grad(true);
    auto c = Tensor<double>::from({2}, {3.0, 4.0});  // gradient norm 5

    const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    Adam<double> opt(ps, b1, b2, eps, 1.0);
    auto loss = sum_all(mul(w, c));
    loss.backward();
    opt.step(lr);

    for (int i = 0; i < 2; ++i) {
        const double g = c.value()[static_cast<size_t>(i)] / 5.0;
        const double mhat = (1 - b1) * g / (1 - b1);
        const double vhat = (1 - b2) * g * g / (1 - b2);
        EXPECT_NEAR(1.0 - w.value()[static_cast<size_t>(i)], lr * mhat / (std::sqrt(vhat) + eps),
                    1e-15);
    }
}

TEST(AdamOptimizer, NoGradientLeavesValuesBitwiseIntact) {
    ParamStore<double> ps;
    auto w = ps.create_zeros("w", {3});
    w.raw_value() = {0.125, -0.0, 7.5};
    Adam<double> opt(ps);
    opt.step(1e-2);
    opt.step(1e-2);
    EXPECT_EQ(w.value()[0], 0.125);
    EXPECT_EQ(w.value()[1], -0.0);
    EXPECT_TRUE(std::signbit(w.value()[1]));
    EXPECT_EQ(w.value()[2], 7.5);
}

TEST(AdamOptimizer, NonFiniteGradientNamesTheParameter) {
    ParamStore<double> ps;
    auto w = ps.create_zeros("offender", {1});
    w.raw_value() = {1.0};
    w.set_requires_grad(true);
    Adam<double> opt(ps);
    auto loss = scale(sum_all(w), std::numeric_limits<double>::infinity());
    loss.backward();
    const double before = w.value()[0];
    try {
        opt.step(1e-3);
        FAIL() << "expected non-finite gradient error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("offender"), std::string::npos);
    }
    EXPECT_EQ(w.value()[0], before);
    EXPECT_EQ(opt.steps_taken(), 0u);
}

TEST(AdamOptimizer, StateRoundTripsThroughTrainState) {
    ParamStore<double> ps;
    auto w = ps.create_zeros("w", {2});
    w.raw_value() = {1.0, 2.0};
    w.set_requires_grad(true);
    auto c = Tensor<double>::from({2}, {0.1, 0.2});
    Adam<double> opt(ps);
    for (int t = 0; t < 3; ++t) {
        ps.zero_grad();
        auto loss = sum_all(mul(w, c));
        loss.backward();
        opt.step(1e-3);
    }
    TrainState st;
    opt.export_state(st);
    EXPECT_EQ(st.adam_t, 3u);
    EXPECT_EQ(st.adam_m.at("w").size(), 2u);

    Adam<double> opt2(ps);
    opt2.import_state(st);
    EXPECT_EQ(opt2.steps_taken(), 3u);

    st.adam_m["ghost"] = {1.0};
    Adam<double> opt3(ps);
    EXPECT_THROW(opt3.import_state(st), std::invalid_argument);
}

TEST(EvaluatePredictions, PerfectPredictionScoresPerfectly) {
    PrimitiveParams p;
    Rng rng(5);
    auto a = sample_primitive<double>(PrimitiveKind::sphere, p, 60, rng);
    auto b = sample_primitive<double>(PrimitiveKind::box, p, 60, rng);
    std::vector<PointCloud<double>> preds{a, b}, gts{a, b};
    std::vector<std::string> cats{"sphere", "box"};
    auto rep = evaluate_predictions(preds, gts, cats, 0.01);
    EXPECT_EQ(rep.cd_l1, 0.0);
    EXPECT_EQ(rep.cd_l2, 0.0);
    EXPECT_EQ(rep.fscore, 1.0);
    ASSERT_EQ(rep.per_category.size(), 2u);
    EXPECT_EQ(rep.per_category.at("sphere").fscore, 1.0);

    EXPECT_THROW(evaluate_predictions(preds, gts, {"sphere"}, 0.01), std::invalid_argument);
    EXPECT_THROW(evaluate_predictions(std::vector<PointCloud<double>>{},
                                      std::vector<PointCloud<double>>{},
                                      std::vector<std::string>{}, 0.01),
                 std::invalid_argument);
}

TEST(TrainConfigValidation, RejectsBadValues) {
    TrainConfig cfg;
    cfg.base_lr = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.total_steps = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.min_lr_ratio = 2.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.eval_every = -1;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    EXPECT_EQ(TrainConfig{}.min_lr(), 1e-4 * 0.01);
}

TEST(Fit, SmokeRunLogsEveryStep) {
    auto cfg = small_config();
    TCorresNet<double> model(cfg, 3);
    auto data = small_data();

    TrainConfig tc;
    tc.total_steps = 5;
    tc.base_lr = 1e-3;
    tc.seed = 7;
    std::ostringstream log;
    auto result = fit(model, data, tc, "", &log);

    EXPECT_EQ(result.steps_run, 5);
    ASSERT_EQ(result.log.size(), 5u);
    for (size_t i = 0; i < result.log.size(); ++i) {
        const auto& e = result.log[i];
        EXPECT_EQ(e.step, static_cast<int64_t>(i) + 1);
        EXPECT_EQ(e.lr, cosine_lr(static_cast<int64_t>(i), 5, 1e-3, 1e-3 * 0.01));
        EXPECT_TRUE(std::isfinite(e.l0) && e.l0 > 0);
        EXPECT_TRUE(std::isfinite(e.l1) && e.l1 > 0);
        EXPECT_EQ(e.wall_ms, 0);
    }
    EXPECT_TRUE(std::isfinite(result.final_loss));

    std::string line;
    std::istringstream lines(log.str());
    size_t n_lines = 0;
    while (std::getline(lines, line)) {
        ++n_lines;
        EXPECT_NE(line.find("\"record\":\"train\""), std::string::npos);
    }
    EXPECT_EQ(n_lines, 5u);

    EXPECT_THROW(fit(model, std::vector<SamplePair<double>>{}, tc), std::invalid_argument);
}

TEST(Fit, PeriodicEvalSweepsLandInTheLog) {
    auto cfg = small_config();
    TCorresNet<double> model(cfg, 3);
    auto data = small_data();

    TrainConfig tc;
    tc.total_steps = 4;
    tc.eval_every = 2;
    tc.seed = 7;
    std::ostringstream log;
    auto result = fit(model, data, tc, "", &log);

    ASSERT_EQ(result.eval_log.size(), 2u);
    EXPECT_EQ(result.eval_log[0].first, 2);
    EXPECT_EQ(result.eval_log[1].first, 4);
    EXPECT_TRUE(std::isfinite(result.eval_log[0].second.cd_l1));
    EXPECT_GT(result.eval_log[0].second.cd_l1, 0.0);

    size_t eval_lines = 0;
    std::string line;
    std::istringstream lines(log.str());
    while (std::getline(lines, line))
        if (line.find("\"record\":\"eval\"") != std::string::npos) ++eval_lines;
    EXPECT_EQ(eval_lines, 2u);
}

TEST(Fit, SameSeedRunsAreBitwiseIdentical) {
    auto cfg = small_config();
    auto data = small_data();
    TrainConfig tc;
    tc.total_steps = 4;
    tc.seed = 9;

    TCorresNet<double> m1(cfg, 3), m2(cfg, 3);
    std::ostringstream log1, log2;
    fit(m1, data, tc, "", &log1);
    fit(m2, data, tc, "", &log2);
    EXPECT_EQ(log1.str(), log2.str());

    for (const auto& [name, p] : m1.params()) {
        auto q = m2.params().at(name);
        for (int64_t i = 0; i < p.numel(); ++i)
            ASSERT_EQ(p.value()[static_cast<size_t>(i)], q.value()[static_cast<size_t>(i)])
                << name;
    }
}

TEST(Fit, ResumeMatchesUninterruptedRun) {
    auto cfg = small_config();
    auto data = small_data();
    TrainConfig tc;
    tc.total_steps = 10;
    tc.checkpoint_every = 5;
    tc.seed = 13;

    auto dir_a = temp_dir("fit_a");
    TCorresNet<double> full(cfg, 21);
    auto full_result = fit(full, data, tc, dir_a);
    ASSERT_TRUE(std::filesystem::exists(dir_a + "/step-5.ckpt"));
    ASSERT_TRUE(std::filesystem::exists(dir_a + "/last.ckpt"));

    auto dir_b = temp_dir("fit_b");
    TCorresNet<double> resumed(cfg, 99);  // different init, overwritten by the checkpoint
    auto resumed_result = fit(resumed, data, tc, dir_b, nullptr, dir_a + "/step-5.ckpt");

    EXPECT_EQ(resumed_result.steps_run, 5);
    ASSERT_EQ(resumed_result.log.size(), 5u);
    for (size_t i = 0; i < 5; ++i) {
        const auto& want = full_result.log[5 + i];
        const auto& got = resumed_result.log[i];
        EXPECT_EQ(got.step, want.step);
        EXPECT_EQ(got.lr, want.lr);
        EXPECT_EQ(got.l0, want.l0);
        EXPECT_EQ(got.l1, want.l1);
    }
    EXPECT_EQ(slurp(dir_a + "/last.ckpt"), slurp(dir_b + "/last.ckpt"));

    TrainConfig shorter = tc;
    shorter.total_steps = 5;
    TCorresNet<double> other(cfg, 99);
    EXPECT_THROW(fit(other, data, shorter, "", nullptr, dir_a + "/last.ckpt"),
                 std::invalid_argument);
}

TEST(Fit, EveryParameterGetsGradientInFiftySteps) {
    auto cfg = small_config();
    TCorresNet<double> model(cfg, 5);
    auto data = small_data();

    TrainConfig tc;
    tc.total_steps = 50;
    tc.seed = 17;
    tc.track_dead_params = true;
    auto result = fit(model, data, tc);
    EXPECT_TRUE(result.dead_params.empty())
        << "dead: " << (result.dead_params.empty() ? "" : result.dead_params.front());
}

TEST(Fit, NonFiniteLossWritesLastGoodCheckpoint) {
    auto cfg = small_config();
    TCorresNet<double> model(cfg, 3);
    model.params().at("fold.l1.b").raw_value()[0] = std::numeric_limits<double>::infinity();
    auto data = small_data();

    TrainConfig tc;
    tc.total_steps = 3;
    auto dir = temp_dir("fit_poison");
    EXPECT_THROW(fit(model, data, tc, dir), std::runtime_error);
    EXPECT_TRUE(std::filesystem::exists(dir + "/last-good.ckpt"));
}

TEST(Evaluate, DeterministicForAFixedSeed) {
    auto cfg = small_config();
    TCorresNet<double> model(cfg, 3);
    auto data = small_data();
    auto a = evaluate(model, data, 41);
    auto b = evaluate(model, data, 41);
    EXPECT_EQ(a.cd_l1, b.cd_l1);
    EXPECT_EQ(a.cd_l2, b.cd_l2);
    EXPECT_EQ(a.fscore, b.fscore);
    EXPECT_TRUE(std::isfinite(a.cd_l1) && a.cd_l1 > 0);
    EXPECT_EQ(a.per_category.size(), 2u);
    EXPECT_THROW(evaluate(model, std::vector<SamplePair<double>>{}, 41), std::invalid_argument);
}
