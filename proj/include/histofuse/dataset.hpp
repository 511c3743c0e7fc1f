#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "histofuse/core.hpp"
#include "histofuse/image.hpp"

namespace histofuse {

struct LabeledImage {
    RgbImage pixels;
    Subclass subclass = Subclass::DC;
    int magnification = 40;
    std::string source_id;
    std::string patient_id;

    BinaryClass binary() const { return binary_class(subclass); }
};

struct ManifestEntry {
    std::string source_id;  // path relative to the manifest root, '/'-separated
    Subclass subclass = Subclass::DC;
    int magnification = 40;
    std::string patient_id;

    bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;

    std::filesystem::path path_of(const ManifestEntry& e) const { return root / e.source_id; }
};

struct ManifestLoad {
    Manifest manifest;
    std::size_t skipped = 0;
    Warnings warnings;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::optional<int> parse_magnification(std::string token) {
    if (!token.empty() && (token.back() == 'X' || token.back() == 'x')) token.pop_back();
    try {
        std::size_t used = 0;
        const int m = std::stoi(token, &used);
        if (used != token.size() || !is_magnification(m)) return std::nullopt;
        return m;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace detail

// Reads either <root>/manifest.csv or the <class>/<subclass>/<mag>/<file> tree.
// Entries come back sorted by source_id.
inline ManifestLoad load_manifest(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw Error("dataset root is not a readable directory: " + root.string());

    ManifestLoad out;
    out.manifest.root = root;
    auto skip = [&](const std::string& why) {
        ++out.skipped;
        out.warnings.push_back(why);
    };

    const fs::path csv = root / "manifest.csv";
    if (fs::exists(csv)) {
        std::ifstream in(csv);
        if (!in) throw Error("cannot read " + csv.string());
        std::string line;
        std::getline(in, line);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line != "path,subclass,magnification,patient_id") {
            throw FormatError("manifest.csv header must be 'path,subclass,magnification,patient_id'");
        }
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line == "\r") continue;
            auto fields = detail::split_csv_line(line);
            if (fields.size() != 4) {
                skip("manifest.csv line " + std::to_string(lineno) + ": expected 4 fields");
                continue;
            }
            auto sc = parse_subclass(fields[1]);
            if (!sc) {
                skip("manifest.csv line " + std::to_string(lineno) + ": unknown subclass '" + fields[1] + "'");
                continue;
            }
            auto mag = detail::parse_magnification(fields[2]);
            if (!mag) {
                skip("manifest.csv line " + std::to_string(lineno) + ": bad magnification '" + fields[2] + "'");
                continue;
            }
            out.manifest.entries.push_back({fields[0], *sc, *mag, fields[3]});
        }
    } else {
        for (fs::recursive_directory_iterator it(root, ec), end; it != end; it.increment(ec)) {
            if (ec) throw Error("error walking " + root.string() + ": " + ec.message());
            if (!it->is_regular_file() || !is_image_file(it->path())) continue;
            const fs::path rel = fs::relative(it->path(), root);
            std::vector<std::string> parts;
            for (const auto& p : rel) parts.push_back(p.string());
            const std::string id = rel.generic_string();
            if (parts.size() != 4) {
                skip(id + ": not in <class>/<subclass>/<magnification>/<file> layout");
                continue;
            }
            auto sc = parse_subclass(parts[1]);
            if (!sc) {
                skip(id + ": unknown subclass '" + parts[1] + "'");
                continue;
            }
            if (parts[0] != to_string(binary_class(*sc))) {
                skip(id + ": class directory '" + parts[0] + "' disagrees with subclass " + parts[1]);
                continue;
            }
            auto mag = detail::parse_magnification(parts[2]);
            if (!mag) {
                skip(id + ": bad magnification '" + parts[2] + "'");
                continue;
            }
            out.manifest.entries.push_back({id, *sc, *mag, ""});
        }
        if (ec) throw Error("error walking " + root.string() + ": " + ec.message());
    }

    std::sort(out.manifest.entries.begin(), out.manifest.entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.source_id < b.source_id; });
    for (std::size_t i = 1; i < out.manifest.entries.size(); ++i) {
        if (out.manifest.entries[i].source_id == out.manifest.entries[i - 1].source_id) {
            throw FormatError("duplicate source id " + out.manifest.entries[i].source_id);
        }
    }
    if (out.manifest.entries.empty()) {
        throw Error("no usable images under " + root.string() + " (" + std::to_string(out.skipped) + " skipped)");
    }
    return out;
}

inline void write_manifest_csv(const std::filesystem::path& path, const Manifest& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "path,subclass,magnification,patient_id\n";
    for (const auto& e : m.entries) {
        out << e.source_id << ',' << to_string(e.subclass) << ',' << e.magnification << ',' << e.patient_id << '\n';
    }
}

inline LabeledImage load_image(const Manifest& m, const ManifestEntry& e, int min_side) {
    LabeledImage img{read_image(m.path_of(e)), e.subclass, e.magnification, e.source_id, e.patient_id};
    if (img.pixels.height < min_side || img.pixels.width < min_side) {
        throw Error("image " + e.source_id + " is " + std::to_string(img.pixels.height) + "x" +
                    std::to_string(img.pixels.width) + ", smaller than patch size " + std::to_string(min_side));
    }
    return img;
}

// ---------------------------------------------------------------------------
// Stain normalization: statistics matching in a log-opponent (l-alpha-beta)
// color space.

struct StainStats {
    std::array<double, 3> mean{};
    std::array<double, 3> stddev{};

    bool operator==(const StainStats&) const = default;
};

namespace detail {

inline const Eigen::Matrix3d& rgb_to_lms() {
    static const Eigen::Matrix3d m = (Eigen::Matrix3d() << 0.3811, 0.5783, 0.0402,
                                                           0.1967, 0.7244, 0.0782,
                                                           0.0241, 0.1288, 0.8444).finished();
    return m;
}

inline const Eigen::Matrix3d& loglms_to_lab() {
    static const Eigen::Matrix3d m = [] {
        Eigen::Matrix3d mix;
        mix << 1, 1, 1,
               1, 1, -2,
               1, -1, 0;
        Eigen::Vector3d scale(1.0 / std::sqrt(3.0), 1.0 / std::sqrt(6.0), 1.0 / std::sqrt(2.0));
        return Eigen::Matrix3d(scale.asDiagonal() * mix);
    }();
    return m;
}

inline const Eigen::Matrix3d& lms_to_rgb() {
    static const Eigen::Matrix3d m = rgb_to_lms().inverse();
    return m;
}

inline const Eigen::Matrix3d& lab_to_loglms() {
    static const Eigen::Matrix3d m = loglms_to_lab().inverse();
    return m;
}

}  // namespace detail

// N x 3 matrix of opponent-space pixel values, row-major pixel order.
inline Eigen::Matrix<double, Eigen::Dynamic, 3> to_opponent(const RgbImage& img) {
    const Eigen::Index n = static_cast<Eigen::Index>(img.height) * img.width;
    Eigen::Matrix<double, Eigen::Dynamic, 3> lab(n, 3);
    const auto& to_lms = detail::rgb_to_lms();
    const auto& to_lab = detail::loglms_to_lab();
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Vector3d rgb(img.data[i * 3], img.data[i * 3 + 1], img.data[i * 3 + 2]);
        Eigen::Vector3d lms = to_lms * rgb;
        for (int k = 0; k < 3; ++k) lms(k) = std::log1p(std::max(lms(k), 0.0));
        lab.row(i) = (to_lab * lms).transpose();
    }
    return lab;
}

inline StainStats channel_stats(const Eigen::Matrix<double, Eigen::Dynamic, 3>& lab) {
    StainStats s;
    const double n = static_cast<double>(lab.rows());
    for (int k = 0; k < 3; ++k) {
        const double mean = lab.col(k).mean();
        const double var = (lab.col(k).array() - mean).square().sum() / n;
        s.mean[k] = mean;
        s.stddev[k] = std::sqrt(var);
    }
    return s;
}

inline StainStats stain_stats(const RgbImage& img) { return channel_stats(to_opponent(img)); }

// Channels whose spread is below this are treated as constant.
inline constexpr double kDegenerateStd = 1e-12;

// Opponent-space values after matching, before conversion back to RGB.
inline Eigen::Matrix<double, Eigen::Dynamic, 3> match_opponent_stats(const Eigen::Matrix<double, Eigen::Dynamic, 3>& lab,
                                                                     const StainStats& reference, bool* degenerate = nullptr) {
    const StainStats src = channel_stats(lab);
    Eigen::Matrix<double, Eigen::Dynamic, 3> out(lab.rows(), 3);
    bool flat = false;
    for (int k = 0; k < 3; ++k) {
        if (src.stddev[k] < kDegenerateStd) {
            flat = true;
            out.col(k) = (lab.col(k).array() - src.mean[k] + reference.mean[k]).matrix();
        } else {
            const double gain = reference.stddev[k] / src.stddev[k];
            out.col(k) = ((lab.col(k).array() - src.mean[k]) * gain + reference.mean[k]).matrix();
        }
    }
    if (degenerate) *degenerate = flat;
    return out;
}

inline RgbImage from_opponent(const Eigen::Matrix<double, Eigen::Dynamic, 3>& lab, int height, int width) {
    RgbImage img(height, width);
    const auto& to_loglms = detail::lab_to_loglms();
    const auto& to_rgb = detail::lms_to_rgb();
    for (Eigen::Index i = 0; i < lab.rows(); ++i) {
        Eigen::Vector3d lms = to_loglms * lab.row(i).transpose();
        for (int k = 0; k < 3; ++k) lms(k) = std::expm1(lms(k));
        const Eigen::Vector3d rgb = to_rgb * lms;
        for (int k = 0; k < 3; ++k) {
            img.data[i * 3 + k] = static_cast<std::uint8_t>(std::clamp(std::lround(rgb(k)), 0L, 255L));
        }
    }
    return img;
}

struct StainResult {
    LabeledImage image;
    bool degenerate = false;  // at least one channel had zero variance
};

inline StainResult stain_normalize(const LabeledImage& image, const StainStats& reference) {
    StainResult res;
    res.image = image;
    const auto lab = match_opponent_stats(to_opponent(image.pixels), reference, &res.degenerate);
    res.image.pixels = from_opponent(lab, image.pixels.height, image.pixels.width);
    return res;
}

// ---------------------------------------------------------------------------
// Patches

struct Patch {
    Matrix pixels;  // P x P grayscale in [0,1]
    std::string parent;
    int row = 0;
    int col = 0;
};

// Grid anchors at multiples of stride plus a final edge-anchored position.
inline std::vector<int> tile_anchors(int length, int size, int stride) {
    if (size > length) throw Error("tile size " + std::to_string(size) + " exceeds extent " + std::to_string(length));
    if (stride <= 0 || stride > size) throw Error("stride must satisfy 0 < stride <= tile size");
    std::vector<int> anchors;
    for (int a = 0; a + size <= length; a += stride) anchors.push_back(a);
    if (anchors.back() + size < length) anchors.push_back(length - size);
    return anchors;
}

inline std::vector<Patch> extract_patches(const Matrix& gray, const std::string& parent, int patch_size, int stride) {
    if (patch_size > gray.rows() || patch_size > gray.cols()) {
        throw Error("patch size " + std::to_string(patch_size) + " exceeds image " + parent + " (" +
                    std::to_string(gray.rows()) + "x" + std::to_string(gray.cols()) + ")");
    }
    const auto rows = tile_anchors(static_cast<int>(gray.rows()), patch_size, stride);
    const auto cols = tile_anchors(static_cast<int>(gray.cols()), patch_size, stride);
    std::vector<Patch> out;
    out.reserve(rows.size() * cols.size());
    for (int r : rows) {
        for (int c : cols) {
            out.push_back({gray.block(r, c, patch_size, patch_size), parent, r, c});
        }
    }
    return out;
}

inline std::vector<Patch> extract_patches(const LabeledImage& image, int patch_size, int stride) {
    if (patch_size > image.pixels.height || patch_size > image.pixels.width) {
        throw Error("patch size " + std::to_string(patch_size) + " exceeds image " + image.source_id + " (" +
                    std::to_string(image.pixels.height) + "x" + std::to_string(image.pixels.width) + ")");
    }
    return extract_patches(to_gray(image.pixels), image.source_id, patch_size, stride);
}

// ---------------------------------------------------------------------------
// Splits

enum class Split : std::uint8_t { Train, Val, Test };

inline std::string_view to_string(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    return std::nullopt;
}

struct SplitAssignment {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
    std::uint64_t seed = 0;
    std::array<double, 3> ratios{0.6, 0.2, 0.2};

    std::map<std::string, Split> lookup() const {
        std::map<std::string, Split> m;
        for (const auto& s : train) m[s] = Split::Train;
        for (const auto& s : val) m[s] = Split::Val;
        for (const auto& s : test) m[s] = Split::Test;
        return m;
    }

    bool operator==(const SplitAssignment&) const = default;
};

struct SplitResult {
    SplitAssignment assignment;
    Warnings warnings;
};

inline constexpr std::size_t kMinStratumSize = 5;

// Stratified by (subclass, magnification), shuffled per stratum.
inline SplitResult split_dataset(const Manifest& manifest, std::array<double, 3> ratios, std::uint64_t seed) {
    if (manifest.entries.empty()) throw Error("cannot split an empty manifest");
    for (double r : ratios) {
        if (r < 0.0) throw ConfigError("split ratios must be nonnegative");
    }
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");

    std::map<std::pair<int, int>, std::vector<std::string>> strata;
    for (const auto& e : manifest.entries) {
        strata[{static_cast<int>(e.subclass), e.magnification}].push_back(e.source_id);
    }

    SplitResult res;
    res.assignment.seed = seed;
    res.assignment.ratios = ratios;
    for (auto& [key, ids] : strata) {
        std::sort(ids.begin(), ids.end());
        const std::string label = std::string(to_string(static_cast<Subclass>(key.first))) + "/" + std::to_string(key.second);
        if (ids.size() < kMinStratumSize) {
            res.warnings.push_back("stratum " + label + " has " + std::to_string(ids.size()) +
                                   " images; all assigned to train");
            res.assignment.train.insert(res.assignment.train.end(), ids.begin(), ids.end());
            continue;
        }
        Rng rng(derive_seed(seed, label));
        rng.shuffle(ids);
        const double n = static_cast<double>(ids.size());
        const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * n));
        const auto n_val = std::min(ids.size() - n_train, static_cast<std::size_t>(std::llround(ratios[1] * n)));
        auto it = ids.begin();
        res.assignment.train.insert(res.assignment.train.end(), it, it + n_train);
        it += n_train;
        res.assignment.val.insert(res.assignment.val.end(), it, it + n_val);
        it += n_val;
        res.assignment.test.insert(res.assignment.test.end(), it, ids.end());
    }
    std::sort(res.assignment.train.begin(), res.assignment.train.end());
    std::sort(res.assignment.val.begin(), res.assignment.val.end());
    std::sort(res.assignment.test.begin(), res.assignment.test.end());
    return res;
}

inline void write_splits_csv(const std::filesystem::path& path, const SplitAssignment& s) {
    std::vector<std::pair<std::string, Split>> rows;
    for (const auto& [id, split] : s.lookup()) rows.emplace_back(id, split);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "path,split\n";
    for (const auto& [id, split] : rows) out << id << ',' << to_string(split) << '\n';
}

inline SplitAssignment read_splits_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingPrerequisite("missing split file " + path.string());
    std::string line;
    std::getline(in, line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "path,split") throw FormatError("splits.csv header must be 'path,split'");
    SplitAssignment s;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = detail::split_csv_line(line);
        if (f.size() != 2) throw FormatError("malformed splits.csv line: " + line);
        auto sp = parse_split(f[1]);
        if (!sp) throw FormatError("unknown split '" + f[1] + "'");
        (*sp == Split::Train ? s.train : *sp == Split::Val ? s.val : s.test).push_back(f[0]);
    }
    return s;
}

}  // namespace histofuse
