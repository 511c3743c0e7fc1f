#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "histofuse/core.hpp"
#include "histofuse/dataset.hpp"

namespace histofuse {

// ---------------------------------------------------------------------------
// Orthonormal 2-D Haar transform.
//
// Sub-band naming follows the order (horizontal, vertical): LH is low-pass
// along rows and high-pass along columns, so it responds to horizontal edges.
// Odd extents pass the trailing sample through the low band and pad the high
// band with a zero, which keeps the transform orthonormal.

struct SubbandLevel {
    Matrix ll, lh, hl, hh;
};

struct SubbandSet {
    std::vector<SubbandLevel> levels;

    const Matrix& final_ll() const { return levels.back().ll; }
    double energy() const {
        double e = final_ll().squaredNorm();
        for (const auto& l : levels) e += l.lh.squaredNorm() + l.hl.squaredNorm() + l.hh.squaredNorm();
        return e;
    }
};

namespace detail {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;

// In: n samples. Out: ceil(n/2) low then ceil(n/2) high coefficients.
template <typename In, typename Out>
void haar_1d(const In& x, Out&& low, Out&& high) {
    const Eigen::Index n = x.size();
    const Eigen::Index half = (n + 1) / 2;
    for (Eigen::Index i = 0; i < n / 2; ++i) {
        low(i) = (x(2 * i) + x(2 * i + 1)) * kInvSqrt2;
        high(i) = (x(2 * i) - x(2 * i + 1)) * kInvSqrt2;
    }
    if (n % 2 == 1) {
        low(half - 1) = x(n - 1);
        high(half - 1) = 0.0;
    }
}

template <typename Low, typename High, typename Out>
void ihaar_1d(const Low& low, const High& high, Eigen::Index n, Out&& x) {
    for (Eigen::Index i = 0; i < n / 2; ++i) {
        x(2 * i) = (low(i) + high(i)) * kInvSqrt2;
        x(2 * i + 1) = (low(i) - high(i)) * kInvSqrt2;
    }
    if (n % 2 == 1) x(n - 1) = low((n + 1) / 2 - 1);
}

inline SubbandLevel haar_level(const Matrix& x) {
    const Eigen::Index rows = x.rows(), cols = x.cols();
    const Eigen::Index hr = (rows + 1) / 2, hc = (cols + 1) / 2;
    // Horizontal pass.
    Matrix lo_h(rows, hc), hi_h(rows, hc);
    for (Eigen::Index r = 0; r < rows; ++r) haar_1d(x.row(r), lo_h.row(r), hi_h.row(r));
    // Vertical pass.
    SubbandLevel out{Matrix(hr, hc), Matrix(hr, hc), Matrix(hr, hc), Matrix(hr, hc)};
    for (Eigen::Index c = 0; c < hc; ++c) {
        haar_1d(lo_h.col(c), out.ll.col(c), out.lh.col(c));
        haar_1d(hi_h.col(c), out.hl.col(c), out.hh.col(c));
    }
    return out;
}

inline Matrix ihaar_level(const Matrix& ll, const SubbandLevel& d, Eigen::Index rows, Eigen::Index cols) {
    const Eigen::Index hc = (cols + 1) / 2;
    Matrix lo_h(rows, hc), hi_h(rows, hc);
    for (Eigen::Index c = 0; c < hc; ++c) {
        ihaar_1d(ll.col(c), d.lh.col(c), rows, lo_h.col(c));
        ihaar_1d(d.hl.col(c), d.hh.col(c), rows, hi_h.col(c));
    }
    Matrix x(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) ihaar_1d(lo_h.row(r), hi_h.row(r), cols, x.row(r));
    return x;
}

}  // namespace detail

inline SubbandSet haar_dwt2(const Matrix& patch, int levels) {
    if (levels < 1) throw Error("DWT needs at least one level");
    const Eigen::Index smallest = std::min(patch.rows(), patch.cols());
    if (smallest < (Eigen::Index{1} << levels)) {
        throw Error("DWT with " + std::to_string(levels) + " levels needs patches of at least " +
                    std::to_string(1 << levels) + " pixels");
    }
    SubbandSet set;
    Matrix cur = patch;
    for (int l = 0; l < levels; ++l) {
        set.levels.push_back(detail::haar_level(cur));
        cur = set.levels.back().ll;
    }
    return set;
}

// Reconstructs a rows x cols input from its decomposition.
inline Matrix haar_idwt2(const SubbandSet& set, Eigen::Index rows, Eigen::Index cols) {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> dims{{rows, cols}};
    for (std::size_t l = 1; l < set.levels.size(); ++l) {
        dims.emplace_back((dims.back().first + 1) / 2, (dims.back().second + 1) / 2);
    }
    Matrix cur = set.final_ll();
    for (std::size_t l = set.levels.size(); l-- > 0;) {
        cur = detail::ihaar_level(cur, set.levels[l], dims[l].first, dims[l].second);
    }
    return cur;
}

// Median of all values; the mean of the two middle values for even counts.
inline double median(std::vector<double> v) {
    if (v.empty()) throw Error("median of empty set");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (v.size() % 2 == 1) return upper;
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

// Sign bits of the first out_len final-LL coefficients against the band
// median (ties map to -1), followed by the final-level LH, HL, HH energies.
inline Vector dwt_hash(const Matrix& patch, int levels, int out_len) {
    const SubbandSet set = haar_dwt2(patch, levels);
    const Matrix& ll = set.final_ll();
    if (ll.size() < out_len) {
        throw Error("final LL band has " + std::to_string(ll.size()) + " coefficients, fewer than " +
                    std::to_string(out_len));
    }
    // Row-major order.
    std::vector<double> coeffs;
    coeffs.reserve(static_cast<std::size_t>(ll.size()));
    for (Eigen::Index r = 0; r < ll.rows(); ++r) {
        for (Eigen::Index c = 0; c < ll.cols(); ++c) coeffs.push_back(ll(r, c));
    }
    const double med = median(coeffs);
    Vector out(out_len + 3);
    for (int i = 0; i < out_len; ++i) out(i) = coeffs[static_cast<std::size_t>(i)] > med ? 1.0 : -1.0;
    const auto& last = set.levels.back();
    out(out_len) = last.lh.squaredNorm();
    out(out_len + 1) = last.hl.squaredNorm();
    out(out_len + 2) = last.hh.squaredNorm();
    return out;
}

// Top-k singular values of each overlapping block divided by the block's
// Frobenius norm, blocks in raster order.
inline Vector svd_hash(const Matrix& patch, int block, int overlap, int k) {
    if (k < 1 || k > block) throw Error("svd_hash needs 1 <= k <= block (k=" + std::to_string(k) + ")");
    if (overlap < 0 || overlap >= block) throw Error("svd_hash overlap must be in [0, block)");
    const auto rows = tile_anchors(static_cast<int>(patch.rows()), block, block - overlap);
    const auto cols = tile_anchors(static_cast<int>(patch.cols()), block, block - overlap);
    Vector out = Vector::Zero(static_cast<Eigen::Index>(rows.size() * cols.size()) * k);
    Eigen::Index at = 0;
    Eigen::JacobiSVD<Matrix> svd;
    for (int r : rows) {
        for (int c : cols) {
            const Matrix b = patch.block(r, c, block, block);
            const double fro = b.norm();
            if (fro > 0.0) {
                svd.compute(b);
                const Vector& s = svd.singularValues();
                for (int i = 0; i < k; ++i) out(at + i) = s(i) / fro;
            }
            at += k;
        }
    }
    return out;
}

inline std::size_t svd_block_count(int patch_rows, int patch_cols, int block, int overlap) {
    return tile_anchors(patch_rows, block, block - overlap).size() * tile_anchors(patch_cols, block, block - overlap).size();
}

// ---------------------------------------------------------------------------
// Harris corners

struct FeaturePoint {
    int row = 0;
    int col = 0;
    double response = 0.0;

    bool operator==(const FeaturePoint&) const = default;
};

struct HarrisParams {
    double sigma = 1.5;
    double kappa = 0.04;
    double threshold = 1e-4;  // fraction of the maximum response
    int margin = 3;
};

inline std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * i * i / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : k) v /= sum;
    return k;
}

namespace detail {

// Separable convolution with replicated borders.
inline Matrix smooth(const Matrix& in, const std::vector<double>& k) {
    const int radius = static_cast<int>(k.size() / 2);
    const Eigen::Index rows = in.rows(), cols = in.cols();
    Matrix tmp(rows, cols), out(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const Eigen::Index cc = std::clamp<Eigen::Index>(c + i, 0, cols - 1);
                acc += k[static_cast<std::size_t>(i + radius)] * in(r, cc);
            }
            tmp(r, c) = acc;
        }
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const Eigen::Index rr = std::clamp<Eigen::Index>(r + i, 0, rows - 1);
                acc += k[static_cast<std::size_t>(i + radius)] * tmp(rr, c);
            }
            out(r, c) = acc;
        }
    }
    return out;
}

}  // namespace detail

// Central-difference gradients (replicated borders), Gaussian-weighted
// structure tensor, R = det(M) - kappa * trace(M)^2.
inline Matrix harris_response(const Matrix& img, double sigma, double kappa) {
    const Eigen::Index rows = img.rows(), cols = img.cols();
    Matrix ixx(rows, cols), iyy(rows, cols), ixy(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            const double gx = 0.5 * (img(r, std::min(c + 1, cols - 1)) - img(r, std::max<Eigen::Index>(c - 1, 0)));
            const double gy = 0.5 * (img(std::min(r + 1, rows - 1), c) - img(std::max<Eigen::Index>(r - 1, 0), c));
            ixx(r, c) = gx * gx;
            iyy(r, c) = gy * gy;
            ixy(r, c) = gx * gy;
        }
    }
    const auto k = gaussian_kernel(sigma);
    const Matrix sxx = detail::smooth(ixx, k);
    const Matrix syy = detail::smooth(iyy, k);
    const Matrix sxy = detail::smooth(ixy, k);
    const Matrix trace = sxx + syy;
    return (sxx.cwiseProduct(syy) - sxy.cwiseProduct(sxy) - kappa * trace.cwiseProduct(trace)).eval();
}

// Strict 3x3 local maxima of a response map above threshold * max, inside
// the margin. Plateaus resolve to their first pixel in raster order.
inline std::vector<FeaturePoint> response_peaks(const Matrix& resp, double threshold, int margin) {
    const int rows = static_cast<int>(resp.rows()), cols = static_cast<int>(resp.cols());
    if (rows - 2 * margin < 3 || cols - 2 * margin < 3) {
        throw Error("patch too small for a " + std::to_string(margin) + " pixel margin");
    }
    double max_r = 0.0;
    for (int r = margin; r < rows - margin; ++r) {
        for (int c = margin; c < cols - margin; ++c) max_r = std::max(max_r, resp(r, c));
    }
    std::vector<FeaturePoint> pts;
    if (!(max_r > 0.0)) return pts;
    const double cut = threshold * max_r;
    for (int r = margin; r < rows - margin; ++r) {
        for (int c = margin; c < cols - margin; ++c) {
            const double v = resp(r, c);
            if (!(v > cut)) continue;
            bool peak = true;
            for (int dr = -1; dr <= 1 && peak; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const int rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
                    const bool earlier = dr < 0 || (dr == 0 && dc < 0);
                    const double n = resp(rr, cc);
                    if (earlier ? n >= v : n > v) {
                        peak = false;
                        break;
                    }
                }
            }
            if (peak) pts.push_back({r, c, v});
        }
    }
    return pts;
}

inline std::vector<FeaturePoint> harris_points(const Matrix& patch, const HarrisParams& p = {}) {
    return response_peaks(harris_response(patch, p.sigma, p.kappa), p.threshold, p.margin);
}

// Normalized (row/P, col/P) pairs of the strongest points, zero padded.
inline Vector fp_segment(std::vector<FeaturePoint> points, int patch_size, int max_points) {
    if (max_points < 1) throw Error("max_points must be >= 1");
    std::sort(points.begin(), points.end(), [](const FeaturePoint& a, const FeaturePoint& b) {
        if (a.response != b.response) return a.response > b.response;
        if (a.row != b.row) return a.row < b.row;
        return a.col < b.col;
    });
    Vector out = Vector::Zero(2 * max_points);
    const auto n = std::min<std::size_t>(points.size(), static_cast<std::size_t>(max_points));
    for (std::size_t i = 0; i < n; ++i) {
        out(static_cast<Eigen::Index>(2 * i)) = static_cast<double>(points[i].row) / patch_size;
        out(static_cast<Eigen::Index>(2 * i + 1)) = static_cast<double>(points[i].col) / patch_size;
    }
    return out;
}

inline Vector feature_point_hash(const Matrix& patch, int max_points, const HarrisParams& p = {}) {
    return fp_segment(harris_points(patch, p), static_cast<int>(patch.rows()), max_points);
}

// ---------------------------------------------------------------------------
// Local signature

struct HashConfig {
    int dwt_levels = 3;
    int dwt_bits = 49;
    int svd_block = 16;
    int svd_overlap = 8;
    int svd_k = 4;
    int fp_max_points = 16;
    HarrisParams harris{};
};

struct HashLayout {
    std::uint32_t dwt = 0;
    std::uint32_t svd = 0;
    std::uint32_t fp = 0;

    std::uint32_t total() const { return dwt + svd + fp; }
    bool operator==(const HashLayout&) const = default;
};

inline HashLayout hash_layout(const HashConfig& cfg, int patch_size) {
    HashLayout l;
    l.dwt = static_cast<std::uint32_t>(cfg.dwt_bits + 3);
    l.svd = static_cast<std::uint32_t>(svd_block_count(patch_size, patch_size, cfg.svd_block, cfg.svd_overlap) *
                                       static_cast<std::size_t>(cfg.svd_k));
    l.fp = static_cast<std::uint32_t>(2 * cfg.fp_max_points);
    return l;
}

struct HashVector {
    Vector values;
    HashLayout layout;

    auto dwt_segment() const { return values.head(layout.dwt); }
    auto svd_segment() const { return values.segment(layout.dwt, layout.svd); }
    auto fp_segment() const { return values.tail(layout.fp); }
};

inline HashVector local_signature(const Matrix& patch, const HashConfig& cfg) {
    if (patch.rows() != patch.cols()) throw Error("local_signature expects square patches");
    const Vector dwt = dwt_hash(patch, cfg.dwt_levels, cfg.dwt_bits);
    const Vector svd = svd_hash(patch, cfg.svd_block, cfg.svd_overlap, cfg.svd_k);
    const Vector fp = feature_point_hash(patch, cfg.fp_max_points, cfg.harris);
    HashVector hv;
    hv.layout = {static_cast<std::uint32_t>(dwt.size()), static_cast<std::uint32_t>(svd.size()),
                 static_cast<std::uint32_t>(fp.size())};
    hv.values.resize(dwt.size() + svd.size() + fp.size());
    hv.values << dwt, svd, fp;
    return hv;
}

}  // namespace histofuse
