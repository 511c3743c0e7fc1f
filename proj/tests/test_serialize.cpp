#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "histofuse/serialize.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace histofuse;

namespace {

void truncate_file(const std::filesystem::path& p, std::size_t drop) {
    const std::string all = oracle::slurp(p);
    const std::string bytes = all.substr(0, all.size() - drop);
    std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

CsmlModel random_csml(std::mt19937_64& gen, Subclass s, int input, int m, int d) {
    CsmlModel c;
    c.subclass = s;
    c.out_dim = d + 1;
    c.landmarks = oracle::random_normal(gen, input, m);
    c.landmark_geodesics = oracle::random_matrix(gen, m, m, 0.0, 5.0);
    c.embedding = oracle::random_normal(gen, d, m);
    c.pseudo_projection = oracle::random_normal(gen, d, m);
    c.mean_sqdist = oracle::random_normal(gen, m, 1);
    c.eigvals = oracle::random_matrix(gen, d, 1, 0.1, 3.0);
    return c;
}

}  // namespace

TEST(Binary, PrimitivesRoundTrip) {
    BinaryWriter w("TST1");
    w.u8(200);
    w.u32(0xDEADBEEF);
    w.u64(0x0123456789ABCDEFull);
    w.f64(-0.1);
    w.str("hello");
    w.mat(Matrix::Identity(2, 3));
    BinaryReader r(w.bytes(), "TST1", "mem");
    EXPECT_EQ(r.u8(), 200);
    EXPECT_EQ(r.u32(), 0xDEADBEEFu);
    EXPECT_EQ(r.u64(), 0x0123456789ABCDEFull);
    EXPECT_EQ(r.f64(), -0.1);
    EXPECT_EQ(r.str(), "hello");
    EXPECT_EQ(r.mat(), Matrix::Identity(2, 3));
    EXPECT_TRUE(r.done());
    EXPECT_THROW(r.u8(), FormatError);
}

TEST(Binary, LittleEndianLayout) {
    BinaryWriter w("X");
    w.u32(0x01020304);
    EXPECT_EQ(w.bytes(), std::string("X\x04\x03\x02\x01", 5));
}

TEST(Binary, WrongMagicAndMissingFile) {
    EXPECT_THROW(BinaryReader("ABC", "ABCD", "mem"), FormatError);
    EXPECT_THROW(BinaryReader("DCA1....", "CSM1", "mem"), FormatError);
    EXPECT_THROW(BinaryReader::open("/nonexistent/file.bin", "CSM1"), MissingPrerequisite);
}

TEST(HashCache, RoundTripAndTruncation) {
    std::mt19937_64 gen(1);
    TempDir dir("hhv");
    HashCache cache;
    cache.layout = {5, 7, 3};
    for (int i = 0; i < 4; ++i) cache.records.push_back({"img" + std::to_string(i), static_cast<std::uint32_t>(i), 3, oracle::random_normal(gen, 15, 1)});
    save_hash_cache(dir / "h.bin", cache);
    const auto back = load_hash_cache(dir / "h.bin");
    EXPECT_EQ(back.layout, cache.layout);
    ASSERT_EQ(back.records.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(back.records[i].source_id, cache.records[i].source_id);
        EXPECT_EQ(back.records[i].row, cache.records[i].row);
        EXPECT_EQ(back.records[i].values, cache.records[i].values);
    }
    truncate_file(dir / "h.bin", 3);
    EXPECT_THROW(load_hash_cache(dir / "h.bin"), FormatError);

    cache.records[0].values = Vector::Zero(14);
    EXPECT_THROW(encode_hash_cache(cache), Error);
}

TEST(Csml, RoundTripAndCorruption) {
    std::mt19937_64 gen(2);
    TempDir dir("csm");
    const std::vector<CsmlModel> models{random_csml(gen, Subclass::A, 6, 9, 3), random_csml(gen, Subclass::PC, 6, 5, 2)};
    save_csml(dir / "c.bin", models);
    const auto back = load_csml(dir / "c.bin");
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].subclass, models[i].subclass);
        EXPECT_EQ(back[i].out_dim, models[i].out_dim);
        EXPECT_EQ(back[i].landmarks, models[i].landmarks);
        EXPECT_EQ(back[i].landmark_geodesics, models[i].landmark_geodesics);
        EXPECT_EQ(back[i].embedding, models[i].embedding);
        EXPECT_EQ(back[i].pseudo_projection, models[i].pseudo_projection);
        EXPECT_EQ(back[i].mean_sqdist, models[i].mean_sqdist);
        EXPECT_EQ(back[i].eigvals, models[i].eigvals);
    }
    truncate_file(dir / "c.bin", 8);
    EXPECT_THROW(load_csml(dir / "c.bin"), FormatError);
    write_bytes(dir / "d.bin", "DCA1");
    EXPECT_THROW(load_csml(dir / "d.bin"), FormatError);
}

TEST(Dca, RoundTripAndInconsistency) {
    std::mt19937_64 gen(3);
    TempDir dir("dca");
    DcaModel m;
    m.wx = oracle::random_normal(gen, 3, 7);
    m.wy = oracle::random_normal(gen, 3, 5);
    m.mean_x = oracle::random_normal(gen, 7, 1);
    m.mean_y = oracle::random_normal(gen, 5, 1);
    m.canonical = oracle::random_matrix(gen, 3, 1, 0.1, 1.0);
    m.classes = 4;
    save_dca(dir / "d.bin", m);
    const auto b = load_dca(dir / "d.bin");
    EXPECT_EQ(b.wx, m.wx);
    EXPECT_EQ(b.wy, m.wy);
    EXPECT_EQ(b.mean_x, m.mean_x);
    EXPECT_EQ(b.mean_y, m.mean_y);
    EXPECT_EQ(b.canonical, m.canonical);
    EXPECT_EQ(b.classes, 4);

    m.mean_y = Vector::Zero(4);
    save_dca(dir / "bad.bin", m);
    EXPECT_THROW(load_dca(dir / "bad.bin"), FormatError);
}

TEST(Ssae, RoundTripPreservesPredictions) {
    std::mt19937_64 gen(4);
    TempDir dir("ssa");
    SsaeModel m;
    m.enc1 = {oracle::random_normal(gen, 6, 4), oracle::random_normal(gen, 6, 1), Activation::Tanh};
    m.enc2 = {oracle::random_normal(gen, 3, 6), oracle::random_normal(gen, 3, 1), Activation::Tanh};
    m.head = {oracle::random_normal(gen, 2, 3), oracle::random_normal(gen, 2, 1), Activation::Linear};
    m.class_order = {Subclass::A, Subclass::DC};
    m.input_mean = oracle::random_normal(gen, 4, 1);
    m.input_scale = oracle::random_matrix(gen, 4, 1, 0.5, 2.0);
    save_ssae(dir / "s.bin", m);
    const auto b = load_ssae(dir / "s.bin");
    EXPECT_EQ(b.class_order, m.class_order);
    const Matrix x = oracle::random_normal(gen, 4, 10);
    EXPECT_EQ(predict_batch(b, x), predict_batch(m, x));

    m.input_mean.resize(0);
    m.input_scale.resize(0);
    save_ssae(dir / "plain.bin", m);
    EXPECT_EQ(load_ssae(dir / "plain.bin").input_mean.size(), 0);

    truncate_file(dir / "s.bin", 1);
    EXPECT_THROW(load_ssae(dir / "s.bin"), FormatError);
}

TEST(Stain, RoundTrip) {
    TempDir dir("stn");
    const StainStats s{{50.0, 10.0, -12.5}, {8.0, 4.0, 6.0}};
    save_stain(dir / "s.bin", s, "SOB_B_A-14-22549AB-40-001");
    std::string id;
    EXPECT_EQ(load_stain(dir / "s.bin", &id), s);
    EXPECT_EQ(id, "SOB_B_A-14-22549AB-40-001");
}

TEST(Features, RoundTripAndMagicCheck) {
    std::mt19937_64 gen(5);
    TempDir dir("fus");
    std::vector<FeatureRecord> recs;
    for (int i = 0; i < 3; ++i) recs.push_back({"id" + std::to_string(i), 1, 2, Subclass::MC, 100, oracle::random_normal(gen, 5, 1)});
    save_features(dir / "f.bin", "FUS1", recs);
    const auto back = load_features(dir / "f.bin", "FUS1");
    ASSERT_EQ(back.size(), 3u);
    EXPECT_EQ(back[2].source_id, "id2");
    EXPECT_EQ(back[2].subclass, Subclass::MC);
    EXPECT_EQ(back[2].magnification, 100);
    EXPECT_EQ(back[2].values, recs[2].values);
    EXPECT_THROW(load_features(dir / "f.bin", "HOL1"), FormatError);
    truncate_file(dir / "f.bin", 4);
    EXPECT_THROW(load_features(dir / "f.bin", "FUS1"), FormatError);
}
