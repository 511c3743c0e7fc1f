#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. None of these call into the library code they check.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline Matrix random_matrix(std::mt19937_64& gen, Eigen::Index rows, Eigen::Index cols, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(gen);
    return m;
}

inline Matrix random_normal(std::mt19937_64& gen, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(gen);
    return m;
}

// One-level orthonormal Haar analysis matrix: low-pass rows first, then
// high-pass rows. n must be even.
inline Matrix haar_matrix(Eigen::Index n) {
    Matrix h = Matrix::Zero(n, n);
    const double s = 1.0 / std::sqrt(2.0);
    for (Eigen::Index i = 0; i < n / 2; ++i) {
        h(i, 2 * i) = s;
        h(i, 2 * i + 1) = s;
        h(n / 2 + i, 2 * i) = s;
        h(n / 2 + i, 2 * i + 1) = -s;
    }
    return h;
}

inline double sorted_median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Singular values via eigenvalues of A'A, descending.
inline Vector gram_singular_values(const Matrix& a) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(a.transpose() * a);
    Vector ev = eig.eigenvalues().reverse();
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = std::sqrt(std::max(0.0, ev(i)));
    return ev;
}

// Harris response by direct 2-D convolution with a truncated Gaussian window
// (radius ceil(3 sigma), replicated borders).
inline Matrix harris_direct(const Matrix& img, double sigma, double kappa) {
    const Eigen::Index rows = img.rows(), cols = img.cols();
    auto at = [&](Eigen::Index r, Eigen::Index c) {
        return img(std::clamp<Eigen::Index>(r, 0, rows - 1), std::clamp<Eigen::Index>(c, 0, cols - 1));
    };
    Matrix gx(rows, cols), gy(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            gx(r, c) = 0.5 * (at(r, c + 1) - at(r, c - 1));
            gy(r, c) = 0.5 * (at(r + 1, c) - at(r - 1, c));
        }
    }
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    Matrix w(2 * radius + 1, 2 * radius + 1);
    for (int i = -radius; i <= radius; ++i) {
        for (int j = -radius; j <= radius; ++j) w(i + radius, j + radius) = std::exp(-0.5 * (i * i + j * j) / (sigma * sigma));
    }
    w /= w.sum();
    Matrix resp(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            double a = 0, b = 0, d = 0;
            for (int i = -radius; i <= radius; ++i) {
                for (int j = -radius; j <= radius; ++j) {
                    const Eigen::Index rr = std::clamp<Eigen::Index>(r + i, 0, rows - 1);
                    const Eigen::Index cc = std::clamp<Eigen::Index>(c + j, 0, cols - 1);
                    const double k = w(i + radius, j + radius);
                    a += k * gx(rr, cc) * gx(rr, cc);
                    b += k * gy(rr, cc) * gy(rr, cc);
                    d += k * gx(rr, cc) * gy(rr, cc);
                }
            }
            resp(r, c) = a * b - d * d - kappa * (a + b) * (a + b);
        }
    }
    return resp;
}

struct Peak {
    int row, col;
    double response;
};

// Exhaustive 3x3 non-maximum suppression: v must beat raster-earlier
// neighbours strictly and later ones weakly.
inline std::vector<Peak> exhaustive_peaks(const Matrix& resp, double rel_threshold, int margin) {
    double mx = 0.0;
    for (int r = margin; r < resp.rows() - margin; ++r) {
        for (int c = margin; c < resp.cols() - margin; ++c) mx = std::max(mx, resp(r, c));
    }
    std::vector<Peak> out;
    if (mx <= 0.0) return out;
    for (int r = margin; r < resp.rows() - margin; ++r) {
        for (int c = margin; c < resp.cols() - margin; ++c) {
            const double v = resp(r, c);
            if (v <= rel_threshold * mx) continue;
            bool ok = true;
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    if (!dr && !dc) continue;
                    const int rr = r + dr, cc = c + dc;
                    if (rr < 0 || cc < 0 || rr >= resp.rows() || cc >= resp.cols()) continue;
                    const bool before = rr < r || (rr == r && cc < c);
                    if (before ? resp(rr, cc) >= v : resp(rr, cc) > v) ok = false;
                }
            }
            if (ok) out.push_back({r, c, v});
        }
    }
    return out;
}

// All-pairs shortest paths on a dense weight matrix (inf = no edge).
inline Matrix floyd_warshall(Matrix d) {
    const Eigen::Index n = d.rows();
    for (Eigen::Index k = 0; k < n; ++k) {
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) d(i, j) = std::min(d(i, j), d(i, k) + d(k, j));
        }
    }
    return d;
}

inline Matrix euclidean_distances(const Matrix& pts) {
    const Eigen::Index n = pts.cols();
    Matrix d(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) d(i, j) = (pts.col(i) - pts.col(j)).norm();
    }
    return d;
}

// Classical MDS on a full distance matrix; returns dim x n coordinates.
inline Matrix classical_mds(const Matrix& dist, int dim) {
    const Eigen::Index n = dist.rows();
    const Matrix j = Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
    const Matrix b = -0.5 * j * dist.cwiseProduct(dist) * j;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(b);
    Matrix out(dim, n);
    for (int i = 0; i < dim; ++i) {
        const Eigen::Index k = n - 1 - i;
        out.row(i) = std::sqrt(std::max(0.0, eig.eigenvalues()(k))) * eig.eigenvectors().col(k).transpose();
    }
    return out;
}

// Full Isomap: brute-force symmetrized kNN graph, Floyd-Warshall, classical MDS.
// Assumes the kNN graph is connected.
inline Matrix full_isomap_geodesics(const Matrix& pts, int k) {
    const Eigen::Index n = pts.cols();
    const Matrix e = euclidean_distances(pts);
    Matrix w = Matrix::Constant(n, n, std::numeric_limits<double>::infinity());
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i) idx.push_back(j);
        }
        std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) { return e(i, a) != e(i, b) ? e(i, a) < e(i, b) : a < b; });
        for (int t = 0; t < k; ++t) {
            w(i, idx[static_cast<std::size_t>(t)]) = e(i, idx[static_cast<std::size_t>(t)]);
            w(idx[static_cast<std::size_t>(t)], i) = e(i, idx[static_cast<std::size_t>(t)]);
        }
        w(i, i) = 0.0;
    }
    return floyd_warshall(w);
}

// Orthogonal Procrustes: best rotation/reflection + translation mapping the
// columns of `from` onto `to`. Returns the max column error after alignment.
struct Procrustes {
    Matrix rotation;
    Vector from_mean, to_mean;

    Matrix apply(const Matrix& x) const { return (rotation * (x.colwise() - from_mean)).colwise() + to_mean; }
};

inline Procrustes fit_procrustes(const Matrix& from, const Matrix& to) {
    Procrustes p;
    p.from_mean = from.rowwise().mean();
    p.to_mean = to.rowwise().mean();
    const Matrix a = from.colwise() - p.from_mean;
    const Matrix b = to.colwise() - p.to_mean;
    Eigen::JacobiSVD<Matrix> svd(b * a.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
    p.rotation = svd.matrixU() * svd.matrixV().transpose();
    return p;
}

inline double max_col_error(const Matrix& a, const Matrix& b) {
    return (a - b).colwise().norm().maxCoeff();
}

// Swiss roll sample: 3 x n.
inline Matrix swiss_roll(std::mt19937_64& gen, int n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix pts(3, n);
    for (int i = 0; i < n; ++i) {
        const double t = 1.5 * std::numbers::pi * (1.0 + 2.0 * u(gen));
        pts(0, i) = t * std::cos(t);
        pts(1, i) = 21.0 * u(gen);
        pts(2, i) = t * std::sin(t);
    }
    return pts;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace oracle
