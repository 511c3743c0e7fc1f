#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "histofuse/core.hpp"
#include "histofuse/dataset.hpp"
#include "histofuse/fusion.hpp"
#include "histofuse/hashing.hpp"
#include "histofuse/manifold.hpp"
#include "histofuse/ssae.hpp"

namespace histofuse {

// Little-endian binary encoding shared by every artifact. Matrices are
// written as u32 rows, u32 cols, then row-major f64 values.
class BinaryWriter {
public:
    explicit BinaryWriter(std::string_view magic) { bytes_.insert(bytes_.end(), magic.begin(), magic.end()); }

    void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    void raw_f64(const double* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) f64(p[i]);
    }
    void vec(const Vector& v) {
        u32(static_cast<std::uint32_t>(v.size()));
        raw_f64(v.data(), static_cast<std::size_t>(v.size()));
    }
    void mat(const Matrix& m) {
        u32(static_cast<std::uint32_t>(m.rows()));
        u32(static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
        }
    }

    const std::string& bytes() const { return bytes_; }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write " + path.string());
        out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
        if (!out) throw Error("write failed for " + path.string());
    }

private:
    std::string bytes_;
};

class BinaryReader {
public:
    BinaryReader(std::string bytes, std::string_view magic, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {
        if (bytes_.size() < magic.size() || bytes_.compare(0, magic.size(), magic) != 0) {
            throw FormatError(name_ + ": expected artifact header '" + std::string(magic) + "' (wrong file or version)");
        }
        pos_ = magic.size();
    }

    static BinaryReader open(const std::filesystem::path& path, std::string_view magic) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw MissingPrerequisite("missing artifact " + path.string());
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return BinaryReader(std::move(bytes), magic, path.string());
    }

    bool done() const { return pos_ == bytes_.size(); }

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const auto n = u32();
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    Vector vec() {
        const auto n = u32();
        need(static_cast<std::size_t>(n) * 8);
        Vector v(n);
        for (std::uint32_t i = 0; i < n; ++i) v(i) = f64();
        return v;
    }
    Matrix mat() {
        const auto rows = u32();
        const auto cols = u32();
        need(static_cast<std::size_t>(rows) * cols * 8);
        Matrix m(rows, cols);
        for (std::uint32_t r = 0; r < rows; ++r) {
            for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = f64();
        }
        return m;
    }

    const std::string& name() const { return name_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw FormatError(name_ + ": truncated artifact");
    }

    std::string bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

inline Subclass read_subclass_tag(BinaryReader& in) {
    const std::string tag = in.str();
    auto s = parse_subclass(tag);
    if (!s) throw FormatError(in.name() + ": unknown subclass tag '" + tag + "'");
    return *s;
}

// ---------------------------------------------------------------------------
// HHV1: hash cache. Header, layout (3 x u32), then records of
// (source_id, row u32, col u32, f64 x layout.total()) until end of file.

struct HashRecord {
    std::string source_id;
    std::uint32_t row = 0;
    std::uint32_t col = 0;
    Vector values;
};

struct HashCache {
    HashLayout layout;
    std::vector<HashRecord> records;
};

inline std::string encode_hash_cache(const HashCache& cache) {
    BinaryWriter w("HHV1");
    w.u32(cache.layout.dwt);
    w.u32(cache.layout.svd);
    w.u32(cache.layout.fp);
    for (const auto& r : cache.records) {
        if (r.values.size() != cache.layout.total()) throw Error("hash record length disagrees with layout");
        w.str(r.source_id);
        w.u32(r.row);
        w.u32(r.col);
        w.raw_f64(r.values.data(), static_cast<std::size_t>(r.values.size()));
    }
    return w.bytes();
}

inline HashCache decode_hash_cache(BinaryReader in) {
    HashCache cache;
    cache.layout.dwt = in.u32();
    cache.layout.svd = in.u32();
    cache.layout.fp = in.u32();
    while (!in.done()) {
        HashRecord r;
        r.source_id = in.str();
        r.row = in.u32();
        r.col = in.u32();
        r.values.resize(cache.layout.total());
        for (std::uint32_t i = 0; i < cache.layout.total(); ++i) r.values(i) = in.f64();
        cache.records.push_back(std::move(r));
    }
    return cache;
}

inline void save_hash_cache(const std::filesystem::path& path, const HashCache& cache) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    const std::string bytes = encode_hash_cache(cache);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline HashCache load_hash_cache(const std::filesystem::path& path) {
    return decode_hash_cache(BinaryReader::open(path, "HHV1"));
}

// ---------------------------------------------------------------------------
// CSM1: class-specific manifold models.

inline void save_csml(const std::filesystem::path& path, const std::vector<CsmlModel>& models) {
    BinaryWriter w("CSM1");
    w.u32(static_cast<std::uint32_t>(models.size()));
    for (const auto& m : models) {
        w.str(to_string(m.subclass));
        w.u32(static_cast<std::uint32_t>(m.landmark_count()));
        w.u32(static_cast<std::uint32_t>(m.dim()));
        w.u32(static_cast<std::uint32_t>(m.out_dim));
        w.mat(m.landmarks);
        w.mat(m.embedding);
        w.mat(m.pseudo_projection);
        w.vec(m.mean_sqdist);
        w.vec(m.eigvals);
        w.mat(m.landmark_geodesics);
    }
    w.save(path);
}

inline std::vector<CsmlModel> load_csml(const std::filesystem::path& path) {
    auto in = BinaryReader::open(path, "CSM1");
    const auto count = in.u32();
    std::vector<CsmlModel> models;
    for (std::uint32_t i = 0; i < count; ++i) {
        CsmlModel m;
        m.subclass = read_subclass_tag(in);
        const auto lm = in.u32();
        const auto d = in.u32();
        m.out_dim = static_cast<int>(in.u32());
        m.landmarks = in.mat();
        m.embedding = in.mat();
        m.pseudo_projection = in.mat();
        m.mean_sqdist = in.vec();
        m.eigvals = in.vec();
        m.landmark_geodesics = in.mat();
        if (m.landmarks.cols() != lm || m.embedding.rows() != d || m.embedding.cols() != lm ||
            m.pseudo_projection.rows() != d || m.mean_sqdist.size() != lm || m.eigvals.size() != d ||
            m.landmark_geodesics.rows() != lm || m.landmark_geodesics.cols() != lm || m.out_dim < static_cast<int>(d)) {
            throw FormatError(path.string() + ": inconsistent dimensions in class model");
        }
        models.push_back(std::move(m));
    }
    if (!in.done()) throw FormatError(path.string() + ": trailing bytes");
    return models;
}

// ---------------------------------------------------------------------------
// DCA1: dims (p, q, r, c), then Wx, Wy, mean_x, mean_y, canonical correlations.

inline void save_dca(const std::filesystem::path& path, const DcaModel& m) {
    BinaryWriter w("DCA1");
    w.u32(static_cast<std::uint32_t>(m.mean_x.size()));
    w.u32(static_cast<std::uint32_t>(m.mean_y.size()));
    w.u32(static_cast<std::uint32_t>(m.rank()));
    w.u32(static_cast<std::uint32_t>(m.classes));
    w.mat(m.wx);
    w.mat(m.wy);
    w.vec(m.mean_x);
    w.vec(m.mean_y);
    w.vec(m.canonical);
    w.save(path);
}

inline DcaModel load_dca(const std::filesystem::path& path) {
    auto in = BinaryReader::open(path, "DCA1");
    const auto p = in.u32(), q = in.u32(), r = in.u32();
    DcaModel m;
    m.classes = static_cast<int>(in.u32());
    m.wx = in.mat();
    m.wy = in.mat();
    m.mean_x = in.vec();
    m.mean_y = in.vec();
    m.canonical = in.vec();
    if (m.wx.rows() != r || m.wx.cols() != p || m.wy.rows() != r || m.wy.cols() != q || m.mean_x.size() != p ||
        m.mean_y.size() != q || m.canonical.size() != r || !in.done()) {
        throw FormatError(path.string() + ": inconsistent DCA dimensions");
    }
    return m;
}

// ---------------------------------------------------------------------------
// SSA1: dims (in, h1, h2, C), three (W, b) pairs, class order, then the
// optional input standardization (u8 flag + mean + scale).

inline void save_ssae(const std::filesystem::path& path, const SsaeModel& m) {
    BinaryWriter w("SSA1");
    w.u32(static_cast<std::uint32_t>(m.enc1.inputs()));
    w.u32(static_cast<std::uint32_t>(m.enc1.outputs()));
    w.u32(static_cast<std::uint32_t>(m.enc2.outputs()));
    w.u32(static_cast<std::uint32_t>(m.head.outputs()));
    for (const DenseLayer* l : {&m.enc1, &m.enc2, &m.head}) {
        w.mat(l->w);
        w.vec(l->b);
    }
    w.u32(static_cast<std::uint32_t>(m.class_order.size()));
    for (auto s : m.class_order) w.str(to_string(s));
    w.u8(m.input_mean.size() > 0 ? 1 : 0);
    if (m.input_mean.size() > 0) {
        w.vec(m.input_mean);
        w.vec(m.input_scale);
    }
    w.save(path);
}

inline SsaeModel load_ssae(const std::filesystem::path& path) {
    auto in = BinaryReader::open(path, "SSA1");
    const auto d = in.u32(), h1 = in.u32(), h2 = in.u32(), c = in.u32();
    SsaeModel m;
    m.enc1.activation = Activation::Tanh;
    m.enc2.activation = Activation::Tanh;
    m.head.activation = Activation::Linear;
    for (DenseLayer* l : {&m.enc1, &m.enc2, &m.head}) {
        l->w = in.mat();
        l->b = in.vec();
    }
    const auto nc = in.u32();
    for (std::uint32_t i = 0; i < nc; ++i) m.class_order.push_back(read_subclass_tag(in));
    if (in.u8()) {
        m.input_mean = in.vec();
        m.input_scale = in.vec();
    }
    if (m.enc1.w.rows() != h1 || m.enc1.w.cols() != d || m.enc2.w.rows() != h2 || m.enc2.w.cols() != h1 ||
        m.head.w.rows() != c || m.head.w.cols() != h2 || nc != c || !in.done() ||
        (m.input_mean.size() != 0 && (m.input_mean.size() != d || m.input_scale.size() != d))) {
        throw FormatError(path.string() + ": inconsistent SSAE dimensions");
    }
    return m;
}

// ---------------------------------------------------------------------------
// STN1: stain reference statistics.

inline void save_stain(const std::filesystem::path& path, const StainStats& s, const std::string& reference_id) {
    BinaryWriter w("STN1");
    w.str(reference_id);
    for (double v : s.mean) w.f64(v);
    for (double v : s.stddev) w.f64(v);
    w.save(path);
}

inline StainStats load_stain(const std::filesystem::path& path, std::string* reference_id = nullptr) {
    auto in = BinaryReader::open(path, "STN1");
    const std::string id = in.str();
    if (reference_id) *reference_id = id;
    StainStats s;
    for (auto& v : s.mean) v = in.f64();
    for (auto& v : s.stddev) v = in.f64();
    return s;
}

// ---------------------------------------------------------------------------
// FUS1: fused patch features.

struct FeatureRecord {
    std::string source_id;
    std::uint32_t row = 0;
    std::uint32_t col = 0;
    Subclass subclass = Subclass::DC;
    int magnification = 40;
    Vector values;
};

inline void save_features(const std::filesystem::path& path, std::string_view magic, const std::vector<FeatureRecord>& recs) {
    BinaryWriter w(magic);
    w.u32(static_cast<std::uint32_t>(recs.size()));
    for (const auto& r : recs) {
        w.str(r.source_id);
        w.u32(r.row);
        w.u32(r.col);
        w.str(to_string(r.subclass));
        w.u32(static_cast<std::uint32_t>(r.magnification));
        w.vec(r.values);
    }
    w.save(path);
}

inline std::vector<FeatureRecord> load_features(const std::filesystem::path& path, std::string_view magic) {
    auto in = BinaryReader::open(path, magic);
    const auto n = in.u32();
    std::vector<FeatureRecord> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        FeatureRecord r;
        r.source_id = in.str();
        r.row = in.u32();
        r.col = in.u32();
        r.subclass = read_subclass_tag(in);
        r.magnification = static_cast<int>(in.u32());
        r.values = in.vec();
        out.push_back(std::move(r));
    }
    if (!in.done()) throw FormatError(path.string() + ": trailing bytes");
    return out;
}

}  // namespace histofuse
