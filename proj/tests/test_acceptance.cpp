#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <tcorres/checkpoint.hpp>
#include <tcorres/cloud_io.hpp>
#include <tcorres/dataset.hpp>
#include <tcorres/geometry.hpp>
#include <tcorres/gradsuite.hpp>
#include <tcorres/metrics.hpp>
#include <tcorres/model.hpp>
#include <tcorres/optim.hpp>
#include <tcorres/rng.hpp>
#include <tcorres/trainer.hpp>

namespace tcorres {
namespace {

// Every criterion below is specified for a single CPU core.
const int force_single_thread = (setenv("TCORRES_THREADS", "1", 1), 0);

double seconds_since(std::chrono::steady_clock::time_point t0) {
    auto dt = std::chrono::steady_clock::now() - t0;
    return std::chrono::duration_cast<std::chrono::milliseconds>(dt).count() / 1000.0;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string fresh_dir(const std::string& name) {
    auto dir = std::filesystem::path(::testing::TempDir()) / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

class Criterion : public ::testing::Test {
protected:
    void Label(int num, const char* what) {
        num_ = num;
        what_ = what;
    }
    void TearDown() override {
        std::printf("criterion %d (%s): %s\n", num_, what_, HasFailure() ? "FAIL" : "PASS");
        std::fflush(stdout);
    }

private:
    int num_ = 0;
    const char* what_ = "";
};

// ---------------------------------------------------------------------------
// Brute-force oracles, written independently of the library kernels. They
// share the library's tie rules: distances compare as dx*dx + dy*dy + dz*dz
// evaluated in coordinate order, and equal distances prefer the lower index.

std::vector<int64_t> fps_oracle(const PointCloud<double>& pc, int64_t m, int64_t start) {
    const int64_t n = pc.count();
    std::vector<double> min_d2(static_cast<size_t>(n), std::numeric_limits<double>::max());
    std::vector<int64_t> picked{start};
    int64_t cur = start;
    while (static_cast<int64_t>(picked.size()) < m) {
        int64_t best = -1;
        double best_d2 = -1;
        for (int64_t i = 0; i < n; ++i) {
            const double dx = pc[i].x - pc[cur].x;
            const double dy = pc[i].y - pc[cur].y;
            const double dz = pc[i].z - pc[cur].z;
            const double d2 = dx * dx + dy * dy + dz * dz;
            if (d2 < min_d2[static_cast<size_t>(i)]) min_d2[static_cast<size_t>(i)] = d2;
            if (min_d2[static_cast<size_t>(i)] > best_d2) {
                best_d2 = min_d2[static_cast<size_t>(i)];
                best = i;
            }
        }
        cur = best;
        picked.push_back(cur);
    }
    return picked;
}

std::vector<int32_t> knn_oracle(const std::vector<double>& q, int64_t nq,
                                const std::vector<double>& r, int64_t nr, int64_t dim,
                                int64_t k) {
    std::vector<int32_t> out;
    out.reserve(static_cast<size_t>(nq * k));
    for (int64_t i = 0; i < nq; ++i) {
        std::vector<std::pair<double, int32_t>> dist;
        dist.reserve(static_cast<size_t>(nr));
        for (int64_t j = 0; j < nr; ++j) {
            double d2 = 0;
            for (int64_t d = 0; d < dim; ++d) {
                const double diff = q[static_cast<size_t>(i * dim + d)] -
                                    r[static_cast<size_t>(j * dim + d)];
                d2 += diff * diff;
            }
            dist.emplace_back(d2, static_cast<int32_t>(j));
        }
        std::sort(dist.begin(), dist.end());
        for (int64_t j = 0; j < k; ++j) out.push_back(dist[static_cast<size_t>(j)].second);
    }
    return out;
}

double nearest_d2_oracle(Vec3<double> p, const PointCloud<double>& refs) {
    double best = std::numeric_limits<double>::max();
    for (int64_t j = 0; j < refs.count(); ++j) {
        const double dx = p.x - refs[j].x;
        const double dy = p.y - refs[j].y;
        const double dz = p.z - refs[j].z;
        const double d2 = dx * dx + dy * dy + dz * dz;
        if (d2 < best) best = d2;
    }
    return best;
}

double chamfer_oracle(const PointCloud<double>& p, const PointCloud<double>& g,
                      ChamferNorm norm) {
    auto side = [&](const PointCloud<double>& a, const PointCloud<double>& b) {
        double acc = 0;
        for (int64_t i = 0; i < a.count(); ++i) {
            const double d2 = nearest_d2_oracle(a[i], b);
            acc += norm == ChamferNorm::l1 ? std::sqrt(d2) : d2;
        }
        return acc / static_cast<double>(a.count());
    };
    return side(p, g) + side(g, p);
}

double fscore_oracle(const PointCloud<double>& p, const PointCloud<double>& g, double tau) {
    auto frac = [&](const PointCloud<double>& a, const PointCloud<double>& b) {
        int64_t hits = 0;
        for (int64_t i = 0; i < a.count(); ++i)
            if (nearest_d2_oracle(a[i], b) <= tau * tau) ++hits;
        return static_cast<double>(hits) / static_cast<double>(a.count());
    };
    const double precision = frac(p, g);
    const double recall = frac(g, p);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

PointCloud<double> random_cloud(int64_t n, Rng& rng) {
    PointCloud<double> pc;
    pc.pts.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        pc.pts.push_back({rng.gaussian(), rng.gaussian(), rng.gaussian()});
    return pc;
}

// ---------------------------------------------------------------------------
// Shared overfit fixtures: eight pairs, two primitive shapes times four crops.

std::vector<SamplePair<double>> overfit_pairs(int64_t n_partial, int64_t n_complete) {
    std::vector<SamplePair<double>> data;
    const PrimitiveKind kinds[2] = {PrimitiveKind::sphere, PrimitiveKind::box};
    for (PrimitiveKind kind : kinds)
        for (int i = 0; i < 4; ++i) {
            const uint64_t seed =
                derive_seed(derive_seed(42, primitive_name(kind)), std::to_string(i));
            data.push_back(
                gen_synthetic_pair<double>(kind, PrimitiveParams{}, n_partial, n_complete, seed));
        }
    return data;
}

ModelConfig overfit_config() {
    ModelConfig cfg;
    cfg.M = 128;
    cfg.C = 192;
    cfg.heads = 6;
    cfg.k = 6;
    cfg.L_enc = 1;
    cfg.L_dec = 1;
    cfg.N0 = 96;
    cfg.N3 = 48;
    cfg.N4 = 64;
    cfg.oversample = 2;
    cfg.up_factor = 4;
    cfg.d_s = 48;
    cfg.corres_dim = 64;
    cfg.vote_dim = 64;
    cfg.corres_sample_n = 96;
    return cfg;
}

ModelConfig ablation_config() {
    ModelConfig cfg;
    cfg.M = 64;
    cfg.C = 96;
    cfg.heads = 6;
    cfg.k = 6;
    cfg.L_enc = 1;
    cfg.L_dec = 1;
    cfg.N0 = 64;
    cfg.N3 = 32;
    cfg.N4 = 48;
    cfg.oversample = 2;
    cfg.up_factor = 4;
    cfg.d_s = 32;
    cfg.corres_dim = 32;
    cfg.vote_dim = 32;
    cfg.corres_sample_n = 64;
    return cfg;
}

TrainConfig overfit_train_config(int64_t steps) {
    TrainConfig tc;
    tc.total_steps = steps;
    tc.batch_size = 8;
    tc.base_lr = 1e-4;
    tc.min_lr_ratio = 0.0;
    tc.seed = 42;
    return tc;
}

double loss_at(const std::vector<TrainLogEntry>& log, int64_t step) {
    for (const auto& e : log)
        if (e.step == step) return e.l0 + e.l1;
    throw std::logic_error("no log entry for step " + std::to_string(step));
}

struct TrainedModel {
    FitResult fit;
    MetricsReport report;
};

TrainedModel train_on(const ModelConfig& cfg, const std::vector<SamplePair<double>>& data,
                      int64_t steps) {
    TrainConfig tc = overfit_train_config(steps);
    TCorresNet<double> model(cfg, derive_seed(tc.seed, "init"));
    TrainedModel out;
    out.fit = fit(model, data, tc);
    out.report = evaluate(model, data, 7);
    return out;
}

// ---------------------------------------------------------------------------

TEST_F(Criterion, GradientChecks) {
    Label(1, "finite-difference gradient checks");
    auto t0 = std::chrono::steady_clock::now();
    int64_t cases = 0;
    for (int i = 0; i < 100; ++i) {
        const uint64_t seed = 1000 + static_cast<uint64_t>(i);
        for (const auto& r : run_grad_suite("all", seed, 1e-4)) {
            EXPECT_TRUE(r.pass) << r.module << "/" << r.name << " seed " << seed
                                << " max rel err " << r.max_rel_err;
            EXPECT_GT(r.coords_checked, 0) << r.module << "/" << r.name;
            ++cases;
        }
    }
    EXPECT_GE(cases, 100 * 40);
    EXPECT_LT(seconds_since(t0), 300.0);
}

TEST_F(Criterion, GeometryAndMetricOracles) {
    Label(2, "brute-force geometry and metric oracles");
    auto t0 = std::chrono::steady_clock::now();
    for (int inst = 0; inst < 200; ++inst) {
        Rng rng(derive_seed(777, std::to_string(inst)));
        const int64_t nq = 1 + static_cast<int64_t>(rng.below(64));
        const int64_t nr = 1 + static_cast<int64_t>(rng.below(64));
        auto queries = random_cloud(nq, rng);
        auto refs = random_cloud(nr, rng);
        if (nr >= 2 && rng.below(3) == 0) refs.pts[1] = refs.pts[0];
        if (rng.below(3) == 0) refs.pts[0] = queries.pts[0];

        const int64_t m = 1 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(nq)));
        const int64_t start = static_cast<int64_t>(rng.below(static_cast<uint64_t>(nq)));
        EXPECT_EQ(farthest_point_sample(queries, m, start), fps_oracle(queries, m, start))
            << "instance " << inst;

        const int64_t k = 1 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(nr)));
        auto qf = detail::flatten(queries);
        auto rf = detail::flatten(refs);
        EXPECT_EQ(knn_points(queries, refs, k).idx, knn_oracle(qf, nq, rf, nr, 3, k))
            << "instance " << inst;

        const int64_t dim = 5;
        std::vector<double> qfeat(static_cast<size_t>(nq * dim)), rfeat(static_cast<size_t>(nr * dim));
        for (auto& v : qfeat) v = rng.gaussian();
        for (auto& v : rfeat) v = rng.gaussian();
        EXPECT_EQ(knn_features(qfeat.data(), nq, rfeat.data(), nr, dim, k).idx,
                  knn_oracle(qfeat, nq, rfeat, nr, dim, k))
            << "instance " << inst;

        EXPECT_NEAR(chamfer(queries, refs, ChamferNorm::l1),
                    chamfer_oracle(queries, refs, ChamferNorm::l1), 1e-6)
            << "instance " << inst;
        EXPECT_NEAR(chamfer(queries, refs, ChamferNorm::l2),
                    chamfer_oracle(queries, refs, ChamferNorm::l2), 1e-6)
            << "instance " << inst;

        const double tau = 0.05 + 0.45 * rng.uniform();
        EXPECT_NEAR(fscore(queries, refs, tau), fscore_oracle(queries, refs, tau), 1e-6)
            << "instance " << inst;
    }
    EXPECT_LT(seconds_since(t0), 60.0);
}

TEST_F(Criterion, StagePointCounts) {
    Label(3, "stage point counts");
    ModelConfig cfg;
    const auto pair =
        gen_synthetic_pair<double>(PrimitiveKind::sphere, PrimitiveParams{}, 1024, 2048, 9);
    TCorresNet<double> model(cfg, 3);
    const auto fr = model.forward(pair.partial, 11, 12);

    const std::vector<int64_t> n0x3{512, 3};
    EXPECT_EQ(fr.coarse.shape(), n0x3);
    EXPECT_EQ(fr.pool.points.shape(), (std::vector<int64_t>{640, 3}));
    const auto& prov = fr.pool.provenance;
    EXPECT_EQ(static_cast<int64_t>(std::count(prov.begin(), prov.end(), Provenance::template_point)),
              256);
    EXPECT_EQ(static_cast<int64_t>(std::count(prov.begin(), prov.end(), Provenance::input_point)),
              384);
    EXPECT_EQ(fr.fine.shape(), n0x3);
    EXPECT_EQ(static_cast<int64_t>(fr.provenance.size()), 512);
    EXPECT_EQ(fr.dense.shape(), (std::vector<int64_t>{512 * 4, 3}));

    ModelConfig wide = cfg;
    wide.up_factor = 32;
    TCorresNet<double> model32(wide, 3);
    const auto fr32 = model32.forward(pair.partial, 11, 12);
    EXPECT_EQ(fr32.dense.shape(), (std::vector<int64_t>{16384, 3}));
}

TEST_F(Criterion, TemplateAndScheduleInvariants) {
    Label(4, "template and schedule invariants");
    for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        const auto sphere = sample_gaussian_sphere<double>(2048, seed);
        for (int64_t i = 0; i < sphere.count(); ++i)
            EXPECT_NEAR(sphere[i].norm(), 1.0, 1e-6) << "seed " << seed << " point " << i;
    }

    ModelConfig cfg;
    const auto pair =
        gen_synthetic_pair<double>(PrimitiveKind::sphere, PrimitiveParams{}, 1024, 2048, 9);
    TCorresNet<double> model(cfg, 3);
    const auto fr = model.forward(pair.partial, 11, 12);

    PointCloud<double> permuted = pair.partial;
    Rng shuffle_rng(55);
    for (size_t i = permuted.pts.size(); i > 1; --i)
        std::swap(permuted.pts[i - 1], permuted.pts[shuffle_rng.below(i)]);
    const auto fr_perm = model.forward(permuted, 11, 12);
    ASSERT_EQ(fr.coarse.shape(), fr_perm.coarse.shape());
    for (int64_t i = 0; i < fr.coarse.numel(); ++i)
        EXPECT_EQ(fr.coarse.value()[static_cast<size_t>(i)], fr_perm.coarse.value()[static_cast<size_t>(i)]) << "flat index " << i;

    std::set<std::array<double, 3>> input_set;
    for (int64_t i = 0; i < pair.partial.count(); ++i)
        input_set.insert({pair.partial[i].x, pair.partial[i].y, pair.partial[i].z});
    int64_t flagged = 0;
    ASSERT_EQ(static_cast<int64_t>(fr.provenance.size()), fr.fine.shape()[0]);
    for (int64_t i = 0; i < fr.fine.shape()[0]; ++i) {
        if (fr.provenance[static_cast<size_t>(i)] != Provenance::input_point) continue;
        ++flagged;
        const auto& fv = fr.fine.value();
        const std::array<double, 3> row{fv[static_cast<size_t>(3 * i)],
                                        fv[static_cast<size_t>(3 * i + 1)],
                                        fv[static_cast<size_t>(3 * i + 2)]};
        EXPECT_TRUE(input_set.count(row)) << "fine row " << i;
    }
    EXPECT_GT(flagged, 0);

    EXPECT_EQ(cosine_lr(0, 1000, 3e-4, 1e-6), 3e-4);
    EXPECT_EQ(cosine_lr(1000, 1000, 3e-4, 1e-6), 1e-6);
    EXPECT_EQ(cosine_lr(500, 1000, 3e-4, 1e-6), 0.5 * (3e-4 + 1e-6));
}

TEST_F(Criterion, OverfitConvergence) {
    Label(5, "overfit convergence");
    auto t0 = std::chrono::steady_clock::now();
    const auto data = overfit_pairs(160, 256);
    const auto run = train_on(overfit_config(), data, 2000);

    const double loss50 = loss_at(run.fit.log, 50);
    const double loss_final = loss_at(run.fit.log, 2000);
    EXPECT_LT(loss_final, 0.2 * loss50)
        << "loss at step 50: " << loss50 << ", at step 2000: " << loss_final;
    EXPECT_LT(run.report.cd_l2, 1e-2);
    EXPECT_GT(run.report.fscore, 0.95);
    EXPECT_LT(seconds_since(t0), 1800.0);
}

TEST_F(Criterion, AblationComparison) {
    Label(6, "ablation comparison");
    const auto data = overfit_pairs(160, 256);
    const int64_t steps = 600;

    const auto full = train_on(ablation_config(), data, steps);

    ModelConfig no_fusion = ablation_config();
    no_fusion.template_fusion = false;
    const auto fusion_off = train_on(no_fusion, data, steps);

    ModelConfig no_pooling = ablation_config();
    no_pooling.corres_pooling = false;
    const auto pooling_off = train_on(no_pooling, data, steps);

    for (const auto* run : {&fusion_off, &pooling_off}) {
        const double loss50 = loss_at(run->fit.log, 50);
        const double loss_final = loss_at(run->fit.log, steps);
        EXPECT_LT(loss_final, 0.2 * loss50);
    }
    EXPECT_LE(full.report.cd_l1, fusion_off.report.cd_l1);
    EXPECT_LE(full.report.cd_l1, pooling_off.report.cd_l1);
}

TEST_F(Criterion, RunToRunDeterminism) {
    Label(7, "run-to-run determinism");
    const auto data = overfit_pairs(96, 128);
    ModelConfig cfg = ablation_config();
    TrainConfig tc = overfit_train_config(10);
    tc.eval_every = 5;
    tc.checkpoint_every = 5;

    auto run_once = [&](const std::string& dir, std::string& log_text, MetricsReport& rep) {
        TCorresNet<double> model(cfg, derive_seed(tc.seed, "init"));
        std::ostringstream log;
        fit(model, data, tc, dir, &log);
        log_text = log.str();
        rep = evaluate(model, data, 7);
    };

    const std::string dir_a = fresh_dir("determinism-a");
    const std::string dir_b = fresh_dir("determinism-b");
    std::string log_a, log_b;
    MetricsReport rep_a, rep_b;
    run_once(dir_a, log_a, rep_a);
    run_once(dir_b, log_b, rep_b);

    EXPECT_FALSE(log_a.empty());
    EXPECT_EQ(log_a, log_b);
    EXPECT_EQ(read_bytes(dir_a + "/last.ckpt"), read_bytes(dir_b + "/last.ckpt"));
    EXPECT_EQ(read_bytes(dir_a + "/step-5.ckpt"), read_bytes(dir_b + "/step-5.ckpt"));
    EXPECT_EQ(rep_a.cd_l1, rep_b.cd_l1);
    EXPECT_EQ(rep_a.cd_l2, rep_b.cd_l2);
    EXPECT_EQ(rep_a.fscore, rep_b.fscore);
}

TEST_F(Criterion, RoundTripsAndResume) {
    Label(8, "round trips and checkpoint resume");
    Rng rng(314159);
    auto cloud = random_cloud(257, rng);

    const std::string dir = fresh_dir("roundtrip");
    const std::string ply_a = dir + "/a.ply";
    const std::string ply_b = dir + "/b.ply";
    write_cloud(cloud, ply_a, CloudFormat::ply_binary_le);
    const auto ply_back = read_cloud<double>(ply_a, CloudFormat::ply_binary_le);
    ASSERT_EQ(ply_back.count(), cloud.count());
    for (int64_t i = 0; i < cloud.count(); ++i) {
        EXPECT_EQ(ply_back[i].x, static_cast<double>(static_cast<float>(cloud[i].x)));
        EXPECT_EQ(ply_back[i].y, static_cast<double>(static_cast<float>(cloud[i].y)));
        EXPECT_EQ(ply_back[i].z, static_cast<double>(static_cast<float>(cloud[i].z)));
    }
    write_cloud(ply_back, ply_b, CloudFormat::ply_binary_le);
    EXPECT_EQ(read_bytes(ply_a), read_bytes(ply_b));

    const std::string xyz_path = dir + "/a.xyz";
    write_cloud(cloud, xyz_path, CloudFormat::xyz_ascii);
    const auto xyz_back = read_cloud<double>(xyz_path, CloudFormat::xyz_ascii);
    ASSERT_EQ(xyz_back.count(), cloud.count());
    for (int64_t i = 0; i < cloud.count(); ++i) {
        EXPECT_EQ(xyz_back[i].x, cloud[i].x);
        EXPECT_EQ(xyz_back[i].y, cloud[i].y);
        EXPECT_EQ(xyz_back[i].z, cloud[i].z);
    }

    const auto data = overfit_pairs(96, 128);
    ModelConfig cfg = ablation_config();
    TrainConfig tc = overfit_train_config(10);
    tc.checkpoint_every = 5;

    const std::string dir_full = fresh_dir("resume-full");
    TCorresNet<double> uninterrupted(cfg, derive_seed(tc.seed, "init"));
    const auto fit_full = fit(uninterrupted, data, tc, dir_full);

    const std::string dir_resumed = fresh_dir("resume-tail");
    TCorresNet<double> resumed(cfg, derive_seed(tc.seed, "init"));
    const auto fit_tail = fit(resumed, data, tc, dir_resumed, nullptr, dir_full + "/step-5.ckpt");
    EXPECT_EQ(fit_tail.steps_run, 5);

    EXPECT_EQ(read_bytes(dir_full + "/last.ckpt"), read_bytes(dir_resumed + "/last.ckpt"));
    for (const auto& tail_entry : fit_tail.log) {
        const auto& full_entry = fit_full.log[static_cast<size_t>(tail_entry.step - 1)];
        EXPECT_EQ(tail_entry.step, full_entry.step);
        EXPECT_EQ(tail_entry.lr, full_entry.lr);
        EXPECT_EQ(tail_entry.l0, full_entry.l0);
        EXPECT_EQ(tail_entry.l1, full_entry.l1);
    }
}

}  // namespace
}  // namespace tcorres
