#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "tcorres/checkpoint.hpp"
#include "tcorres/cloud_io.hpp"
#include "tcorres/dataset.hpp"

using namespace tcorres;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::path(::testing::TempDir()) / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

PointCloud<double> random_cloud(int64_t n, uint64_t seed) {
    Rng rng(seed);
    PointCloud<double> pc;
    for (int64_t i = 0; i < n; ++i)
        pc.pts.push_back({rng.gaussian(), rng.gaussian(), rng.gaussian()});
    return pc;
}

}  // namespace

TEST(Primitives, SpherePointsSitOnRadius) {
    Rng rng(1);
    PrimitiveParams p;
    p.radius = 1.0;
    auto pc = sample_primitive<double>(PrimitiveKind::sphere, p, 500, rng);
    for (const auto& pt : pc.pts) EXPECT_NEAR(pt.norm(), 1.0, 1e-6);
}

TEST(Primitives, BoxPointsLieOnFaces) {
    Rng rng(2);
    PrimitiveParams p;
    auto pc = sample_primitive<double>(PrimitiveKind::box, p, 500, rng);
    for (const auto& pt : pc.pts) {
        bool on_face = std::abs(std::abs(pt.x) - 0.5 * p.box_x) < 1e-12 ||
                       std::abs(std::abs(pt.y) - 0.5 * p.box_y) < 1e-12 ||
                       std::abs(std::abs(pt.z) - 0.5 * p.box_z) < 1e-12;
        EXPECT_TRUE(on_face);
        EXPECT_LE(std::abs(pt.x), 0.5 * p.box_x + 1e-12);
        EXPECT_LE(std::abs(pt.y), 0.5 * p.box_y + 1e-12);
        EXPECT_LE(std::abs(pt.z), 0.5 * p.box_z + 1e-12);
    }
}

TEST(Primitives, BoxFaceFractionsMatchAreas) {
    Rng rng(3);
    PrimitiveParams p;  // 1.0 x 1.4 x 0.8
    const int64_t n = 40000;
    auto pc = sample_primitive<double>(PrimitiveKind::box, p, n, rng);
    int64_t on_x = 0, on_y = 0, on_z = 0;
    for (const auto& pt : pc.pts) {
        if (std::abs(std::abs(pt.x) - 0.5 * p.box_x) < 1e-12) ++on_x;
        else if (std::abs(std::abs(pt.y) - 0.5 * p.box_y) < 1e-12) ++on_y;
        else ++on_z;
    }
    const double total = 2 * (p.box_y * p.box_z + p.box_x * p.box_z + p.box_x * p.box_y);
    EXPECT_NEAR(static_cast<double>(on_x) / n, 2 * p.box_y * p.box_z / total, 0.02);
    EXPECT_NEAR(static_cast<double>(on_y) / n, 2 * p.box_x * p.box_z / total, 0.02);
    EXPECT_NEAR(static_cast<double>(on_z) / n, 2 * p.box_x * p.box_y / total, 0.02);
}

TEST(Primitives, CylinderPointsOnSurface) {
    Rng rng(4);
    PrimitiveParams p;
    auto pc = sample_primitive<double>(PrimitiveKind::cylinder, p, 500, rng);
    for (const auto& pt : pc.pts) {
        double radial = std::sqrt(pt.x * pt.x + pt.y * pt.y);
        bool on_cap = std::abs(std::abs(pt.z) - 0.5 * p.height) < 1e-12 && radial <= p.radius + 1e-9;
        bool on_side = std::abs(radial - p.radius) < 1e-9 && std::abs(pt.z) <= 0.5 * p.height + 1e-12;
        EXPECT_TRUE(on_cap || on_side);
    }
}

TEST(Primitives, ConePointsOnSurface) {
    Rng rng(5);
    PrimitiveParams p;
    auto pc = sample_primitive<double>(PrimitiveKind::cone, p, 500, rng);
    for (const auto& pt : pc.pts) {
        double radial = std::sqrt(pt.x * pt.x + pt.y * pt.y);
        EXPECT_LE(std::abs(pt.z), 0.5 * p.height + 1e-12);
        bool on_base = std::abs(pt.z + 0.5 * p.height) < 1e-12 && radial <= p.radius + 1e-9;
        double want_r = p.radius * (0.5 * p.height - pt.z) / p.height;
        bool on_side = std::abs(radial - want_r) < 1e-9;
        EXPECT_TRUE(on_base || on_side);
    }
}

TEST(Primitives, TorusPointsOnTube) {
    Rng rng(6);
    PrimitiveParams p;
    auto pc = sample_primitive<double>(PrimitiveKind::torus, p, 500, rng);
    for (const auto& pt : pc.pts) {
        double ring = std::sqrt(pt.x * pt.x + pt.y * pt.y) - p.radius;
        double tube = std::sqrt(ring * ring + pt.z * pt.z);
        EXPECT_NEAR(tube, p.minor_radius, 1e-9);
    }
}

TEST(Primitives, ParameterValidation) {
    Rng rng(7);
    PrimitiveParams bad_torus;
    bad_torus.minor_radius = bad_torus.radius;
    EXPECT_THROW(sample_primitive<double>(PrimitiveKind::torus, bad_torus, 10, rng),
                 std::invalid_argument);
    PrimitiveParams bad_radius;
    bad_radius.radius = 0;
    EXPECT_THROW(sample_primitive<double>(PrimitiveKind::sphere, bad_radius, 10, rng),
                 std::invalid_argument);
    PrimitiveParams ok;
    EXPECT_THROW(sample_primitive<double>(PrimitiveKind::sphere, ok, 0, rng),
                 std::invalid_argument);
    EXPECT_EQ(primitive_from_name("torus"), PrimitiveKind::torus);
    EXPECT_THROW(primitive_from_name("pyramid"), std::invalid_argument);
}

TEST(SyntheticPair, DeterministicAndNormalized) {
    PrimitiveParams p;
    auto a = gen_synthetic_pair<double>(PrimitiveKind::cone, p, 128, 256, 42);
    auto b = gen_synthetic_pair<double>(PrimitiveKind::cone, p, 128, 256, 42);
    ASSERT_EQ(a.partial.count(), 128);
    ASSERT_EQ(a.complete.count(), 256);
    for (int64_t i = 0; i < a.complete.count(); ++i) {
        EXPECT_EQ(a.complete[i].x, b.complete[i].x);
        EXPECT_EQ(a.complete[i].y, b.complete[i].y);
        EXPECT_EQ(a.complete[i].z, b.complete[i].z);
    }
    for (int64_t i = 0; i < a.partial.count(); ++i) {
        EXPECT_EQ(a.partial[i].x, b.partial[i].x);
        EXPECT_EQ(a.partial[i].y, b.partial[i].y);
        EXPECT_EQ(a.partial[i].z, b.partial[i].z);
    }

    Vec3<double> centroid{};
    double max_r = 0;
    for (const auto& pt : a.complete.pts) centroid = centroid + pt;
    centroid = centroid * (1.0 / static_cast<double>(a.complete.count()));
    for (const auto& pt : a.complete.pts) max_r = std::max(max_r, (pt - centroid).norm());
    EXPECT_NEAR(centroid.norm(), 0.0, 1e-12);
    EXPECT_NEAR(max_r, 1.0, 1e-12);

    auto c = gen_synthetic_pair<double>(PrimitiveKind::cone, p, 128, 256, 43);
    bool differs = false;
    for (int64_t i = 0; i < 256 && !differs; ++i)
        differs = a.complete[i].x != c.complete[i].x;
    EXPECT_TRUE(differs);
    EXPECT_EQ(a.category, "cone");
}

TEST(SyntheticPair, PartialPointsComeFromComplete) {
    PrimitiveParams p;
    auto pair = gen_synthetic_pair<double>(PrimitiveKind::torus, p, 200, 300, 7);
    for (const auto& pt : pair.partial.pts) {
        bool found = false;
        for (const auto& q : pair.complete.pts)
            if (pt.x == q.x && pt.y == q.y && pt.z == q.z) {
                found = true;
                break;
            }
        EXPECT_TRUE(found);
    }
}

TEST(XyzIo, RoundTripIsExact) {
    auto pc = random_cloud(64, 8);
    auto path = temp_path("cloud_roundtrip.xyz");
    write_cloud(pc, path, CloudFormat::xyz_ascii);
    auto back = read_cloud<double>(path, CloudFormat::xyz_ascii);
    ASSERT_EQ(back.count(), pc.count());
    for (int64_t i = 0; i < pc.count(); ++i) {
        EXPECT_EQ(back[i].x, pc[i].x);
        EXPECT_EQ(back[i].y, pc[i].y);
        EXPECT_EQ(back[i].z, pc[i].z);
    }
}

TEST(XyzIo, HandWrittenFileParses) {
    auto path = temp_path("hand.xyz");
    spit(path, "0 0 0\n1.5 -2 3e2\n-0.25 0.5 1\n");
    auto pc = read_cloud<double>(path, CloudFormat::xyz_ascii);
    ASSERT_EQ(pc.count(), 3);
    EXPECT_EQ(pc[0].x, 0.0);
    EXPECT_EQ(pc[1].x, 1.5);
    EXPECT_EQ(pc[1].y, -2.0);
    EXPECT_EQ(pc[1].z, 300.0);
    EXPECT_EQ(pc[2].x, -0.25);
}

TEST(XyzIo, ErrorsCarryKindAndOffset) {
    auto path = temp_path("bad.xyz");
    spit(path, "1 2\n");
    try {
        read_cloud<double>(path, CloudFormat::xyz_ascii);
        FAIL() << "expected malformed record";
    } catch (const IoError& e) {
        EXPECT_EQ(e.kind, IoError::Kind::malformed_record);
    }

    spit(path, "1 2 nan\n");
    try {
        read_cloud<double>(path, CloudFormat::xyz_ascii);
        FAIL() << "expected non-finite error";
    } catch (const IoError& e) {
        EXPECT_EQ(e.kind, IoError::Kind::non_finite_value);
        EXPECT_EQ(e.byte_offset, 4u);
    }

    spit(path, "1 2 3 4\n");
    try {
        read_cloud<double>(path, CloudFormat::xyz_ascii);
        FAIL() << "expected trailing junk error";
    } catch (const IoError& e) {
        EXPECT_EQ(e.kind, IoError::Kind::malformed_record);
    }

    EXPECT_THROW(read_cloud<double>(temp_path("missing_file.xyz"), CloudFormat::xyz_ascii),
                 IoError);
}

TEST(PlyIo, RoundTripIsBitwise) {
    Rng rng(9);
    PointCloud<float> pc;
    for (int i = 0; i < 50; ++i)
        pc.pts.push_back({static_cast<float>(rng.gaussian()), static_cast<float>(rng.gaussian()),
                          static_cast<float>(rng.gaussian())});
    auto path = temp_path("cloud.ply");
    write_cloud(pc, path, CloudFormat::ply_binary_le);
    auto back = read_cloud<float>(path, CloudFormat::ply_binary_le);
    ASSERT_EQ(back.count(), pc.count());
    for (int64_t i = 0; i < pc.count(); ++i) {
        EXPECT_EQ(back[i].x, pc[i].x);
        EXPECT_EQ(back[i].y, pc[i].y);
        EXPECT_EQ(back[i].z, pc[i].z);
    }

    // writing the parsed cloud again reproduces the file byte for byte
    auto path2 = temp_path("cloud2.ply");
    write_cloud(back, path2, CloudFormat::ply_binary_le);
    EXPECT_EQ(slurp(path), slurp(path2));
}

TEST(PlyIo, HeaderErrors) {
    auto path = temp_path("bad.ply");
    spit(path, "not a ply\n");
    try {
        read_cloud<double>(path, CloudFormat::ply_binary_le);
        FAIL() << "expected header error";
    } catch (const IoError& e) {
        EXPECT_EQ(e.kind, IoError::Kind::malformed_header);
        EXPECT_EQ(e.byte_offset, 0u);
    }

    spit(path, "ply\nformat ascii 1.0\nelement vertex 0\nend_header\n");
    try {
        read_cloud<double>(path, CloudFormat::ply_binary_le);
        FAIL() << "expected format error";
    } catch (const IoError& e) {
        EXPECT_EQ(e.kind, IoError::Kind::malformed_header);
        EXPECT_EQ(e.byte_offset, 4u);
    }
}

TEST(PlyIo, TruncatedPayloadDetected) {
    PointCloud<float> pc;
    pc.pts = {{1.f, 2.f, 3.f}, {4.f, 5.f, 6.f}};
    auto path = temp_path("trunc.ply");
    write_cloud(pc, path, CloudFormat::ply_binary_le);
    auto trunc_bytes = slurp(path);
    spit(path, trunc_bytes.substr(0, trunc_bytes.size() - 5));
    try {
        read_cloud<float>(path, CloudFormat::ply_binary_le);
        FAIL() << "expected truncation error";
    } catch (const IoError& e) {
        EXPECT_EQ(e.kind, IoError::Kind::truncated_payload);
        EXPECT_EQ(e.byte_offset, trunc_bytes.size() - 5);
    }
}

TEST(PlyIo, NonFiniteVertexDetected) {
    PointCloud<float> pc;
    pc.pts = {{1.f, std::numeric_limits<float>::quiet_NaN(), 3.f}};
    auto path = temp_path("nan.ply");
    write_cloud(pc, path, CloudFormat::ply_binary_le);
    try {
        read_cloud<float>(path, CloudFormat::ply_binary_le);
        FAIL() << "expected non-finite error";
    } catch (const IoError& e) {
        EXPECT_EQ(e.kind, IoError::Kind::non_finite_value);
    }
}

TEST(Manifest, ParsesOrderedRecords) {
    auto path = temp_path("manifest.txt");
    spit(path, "a cone /tmp/a_p.ply /tmp/a_c.ply\n\nb torus /tmp/b_p.ply /tmp/b_c.ply\n");
    auto entries = load_manifest(path);
    ASSERT_EQ(entries.size(), 2u);
    EXPECT_EQ(entries[0].id, "a");
    EXPECT_EQ(entries[0].category, "cone");
    EXPECT_EQ(entries[0].partial_path, "/tmp/a_p.ply");
    EXPECT_EQ(entries[1].id, "b");
    EXPECT_EQ(entries[1].complete_path, "/tmp/b_c.ply");
}

TEST(Manifest, EmptyFileGivesEmptyDataset) {
    auto path = temp_path("empty_manifest.txt");
    spit(path, "");
    EXPECT_TRUE(load_manifest(path).empty());
}

TEST(Manifest, DuplicateIdNamesTheId) {
    auto path = temp_path("dup_manifest.txt");
    spit(path, "x cone a b\nx torus c d\n");
    try {
        load_manifest(path);
        FAIL() << "expected duplicate id error";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("x"), std::string::npos);
    }
    spit(path, "only three fields\n");
    EXPECT_THROW(load_manifest(path), IoError);
}

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.M = 8;
    cfg.C = 12;
    cfg.heads = 2;
    cfg.k = 3;
    cfg.L_enc = 1;
    cfg.L_dec = 1;
    cfg.N0 = 12;
    cfg.N3 = 6;
    cfg.N4 = 8;
    cfg.oversample = 2;
    cfg.up_factor = 4;
    cfg.d_s = 6;
    cfg.corres_dim = 8;
    cfg.vote_dim = 8;
    cfg.corres_sample_n = 8;
    cfg.validate();
    return cfg;
}

ParamStore<double> make_store(const ModelConfig& cfg, uint64_t seed) {
    ParamStore<double> ps;
    Rng rng(seed);
    ps.create_glorot("layer.w", cfg.C, cfg.C, rng);
    ps.create_zeros("layer.b", {cfg.C});
    ps.create_glorot("head.w", cfg.C, 3, rng);
    return ps;
}

TrainState make_state() {
    TrainState st;
    st.step = 17;
    st.adam_t = 17;
    st.rng_states["run"] = 99;
    st.adam_m["layer.w"] = std::vector<double>(144, 0.25);
    st.adam_v["layer.w"] = std::vector<double>(144, 0.5);
    return st;
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsBitwise) {
    auto cfg = tiny_config();
    auto ps = make_store(cfg, 1);
    auto st = make_state();
    auto path_a = temp_path("ck_a.bin");
    save_checkpoint(path_a, cfg, ps, st);

    auto ps2 = make_store(cfg, 2);  // different values, same structure
    auto st2 = load_checkpoint(path_a, cfg, ps2);
    EXPECT_EQ(st2.step, st.step);
    EXPECT_EQ(st2.adam_t, st.adam_t);
    EXPECT_EQ(st2.rng_states.at("run"), 99u);
    EXPECT_EQ(st2.adam_m.at("layer.w")[0], 0.25);
    for (const auto& [name, p] : ps) {
        auto q = ps2.at(name);
        for (int64_t i = 0; i < p.numel(); ++i)
            EXPECT_EQ(p.value()[static_cast<size_t>(i)], q.value()[static_cast<size_t>(i)]);
    }

    auto path_b = temp_path("ck_b.bin");
    save_checkpoint(path_b, cfg, ps2, st2);
    EXPECT_EQ(slurp(path_a), slurp(path_b));
}

TEST(Checkpoint, ConfigMismatchRejected) {
    auto cfg = tiny_config();
    auto ps = make_store(cfg, 3);
    auto path = temp_path("ck_cfg.bin");
    save_checkpoint(path, cfg, ps, make_state());

    auto other = cfg;
    other.C = cfg.C * 2;
    auto ps2 = make_store(cfg, 4);
    try {
        load_checkpoint(path, other, ps2);
        FAIL() << "expected config mismatch";
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind, CheckpointError::Kind::config_mismatch);
    }
}

TEST(Checkpoint, CorruptionAndVersionDetected) {
    auto cfg = tiny_config();
    auto ps = make_store(cfg, 5);
    auto path = temp_path("ck_corrupt.bin");
    save_checkpoint(path, cfg, ps, make_state());

    auto bytes = slurp(path);
    auto flipped = bytes;
    flipped[20] = static_cast<char>(flipped[20] ^ 0x1);
    spit(path, flipped);
    auto ps2 = make_store(cfg, 6);
    try {
        load_checkpoint(path, cfg, ps2);
        FAIL() << "expected digest mismatch";
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind, CheckpointError::Kind::digest_mismatch);
    }

    // bump the version field and re-stamp the digest
    auto versioned = bytes;
    versioned[8] = 2;
    uint64_t digest = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i + 8 < versioned.size(); ++i) {
        digest ^= static_cast<unsigned char>(versioned[i]);
        digest *= 0x100000001b3ULL;
    }
    for (int i = 0; i < 8; ++i)
        versioned[versioned.size() - 8 + static_cast<size_t>(i)] =
            static_cast<char>((digest >> (8 * i)) & 0xff);
    spit(path, versioned);
    try {
        load_checkpoint(path, cfg, ps2);
        FAIL() << "expected version mismatch";
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind, CheckpointError::Kind::version_mismatch);
    }

    spit(path, bytes.substr(0, 10));
    EXPECT_THROW(load_checkpoint(path, cfg, ps2), CheckpointError);
}

TEST(Checkpoint, UnknownParameterRejected) {
    auto cfg = tiny_config();
    auto ps = make_store(cfg, 7);
    auto path = temp_path("ck_names.bin");
    save_checkpoint(path, cfg, ps, make_state());

    ParamStore<double> renamed;
    Rng rng(8);
    renamed.create_glorot("layer.w", cfg.C, cfg.C, rng);
    renamed.create_zeros("layer.bias", {cfg.C});
    renamed.create_glorot("head.w", cfg.C, 3, rng);
    try {
        load_checkpoint(path, cfg, renamed);
        FAIL() << "expected unknown parameter";
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind, CheckpointError::Kind::unknown_parameter);
    }

    ParamStore<double> fewer;
    fewer.create_glorot("layer.w", cfg.C, cfg.C, rng);
    try {
        load_checkpoint(path, cfg, fewer);
        FAIL() << "expected parameter count mismatch";
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind, CheckpointError::Kind::unknown_parameter);
    }
}
