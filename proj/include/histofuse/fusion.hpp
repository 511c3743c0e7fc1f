#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "histofuse/core.hpp"

namespace histofuse {

// Discriminant correlation analysis for two paired feature streams.
//
// Each stream is first whitened on its between-class scatter (P' Sb P = I,
// computed through the c x c Gram matrix of weighted class-mean deviations),
// then both are rotated by the SVD of their r x r cross-covariance and scaled
// so that the transformed training streams satisfy X* Y*' = I.
struct DcaModel {
    Matrix wx;          // r x p
    Matrix wy;          // r x q
    Vector mean_x;      // p
    Vector mean_y;      // q
    Vector canonical;   // r singular values of the whitened cross-covariance
    int classes = 0;

    int rank() const { return static_cast<int>(wx.rows()); }
};

struct DcaFit {
    DcaModel model;
    Matrix px;  // p x r whitening transform of stream X
    Matrix py;  // q x r
    Warnings warnings;
};

// Between-class scatter sum_i n_i (mu_i - mu)(mu_i - mu)' of centred data.
inline Matrix between_class_scatter(const Matrix& centred, const std::vector<int>& labels) {
    std::map<int, std::pair<Vector, int>> sums;
    for (std::size_t j = 0; j < labels.size(); ++j) {
        auto& [s, n] = sums.try_emplace(labels[j], Vector::Zero(centred.rows()), 0).first->second;
        s += centred.col(static_cast<Eigen::Index>(j));
        ++n;
    }
    Matrix sb = Matrix::Zero(centred.rows(), centred.rows());
    for (const auto& [label, sn] : sums) {
        const Vector mu = sn.first / sn.second;
        sb += sn.second * mu * mu.transpose();
    }
    return sb;
}

struct Whitening {
    Matrix transform;  // p x r with transform' * Sb * transform = I
    int rank = 0;
};

// Whitening of the between-class scatter via the c x c Gram trick. Keeps at
// most `r` directions whose eigenvalue exceeds floor * total scatter.
inline Whitening whiten_between_class(const Matrix& centred, const std::vector<int>& labels, int r) {
    std::map<int, std::pair<Vector, int>> sums;
    for (std::size_t j = 0; j < labels.size(); ++j) {
        auto& [s, n] = sums.try_emplace(labels[j], Vector::Zero(centred.rows()), 0).first->second;
        s += centred.col(static_cast<Eigen::Index>(j));
        ++n;
    }
    const auto c = static_cast<Eigen::Index>(sums.size());
    Matrix phi(centred.rows(), c);
    Eigen::Index col = 0;
    for (const auto& [label, sn] : sums) {
        phi.col(col++) = std::sqrt(static_cast<double>(sn.second)) * (sn.first / sn.second);
    }
    const Matrix gram = phi.transpose() * phi;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    if (eig.info() != Eigen::Success) throw NumericError("eigendecomposition of class Gram matrix failed");

    const double total = centred.squaredNorm();
    Whitening w;
    std::vector<std::pair<double, Vector>> kept;
    for (Eigen::Index i = c - 1; i >= 0 && static_cast<int>(kept.size()) < r; --i) {
        const double lambda = eig.eigenvalues()(i);
        if (!(lambda > 1e-10 * total) || !(lambda > 0.0)) break;
        Vector v = eig.eigenvectors().col(i);
        fix_sign(v);
        kept.emplace_back(lambda, std::move(v));
    }
    w.rank = static_cast<int>(kept.size());
    w.transform.resize(centred.rows(), w.rank);
    for (int i = 0; i < w.rank; ++i) {
        w.transform.col(i) = phi * kept[static_cast<std::size_t>(i)].second / kept[static_cast<std::size_t>(i)].first;
    }
    return w;
}

inline DcaFit fit_dca(const Matrix& x, const Matrix& y, const std::vector<int>& labels, int r) {
    const auto n = static_cast<std::size_t>(x.cols());
    if (static_cast<std::size_t>(y.cols()) != n || labels.size() != n) throw Error("fit_dca: streams and labels must be paired");
    std::map<int, int> counts;
    for (int l : labels) ++counts[l];
    const int c = static_cast<int>(counts.size());
    for (const auto& [label, cnt] : counts) {
        if (cnt < 2) throw Error("fit_dca: class " + std::to_string(label) + " has fewer than 2 samples");
    }
    DcaFit fit;
    if (r > c - 1) {
        fit.warnings.push_back("DCA rank " + std::to_string(r) + " exceeds c-1; using " + std::to_string(c - 1));
        r = c - 1;
    }
    if (r < 1) throw NumericError("fit_dca: no discriminative directions (rank 0)");

    DcaModel& m = fit.model;
    m.classes = c;
    m.mean_x = x.rowwise().mean();
    m.mean_y = y.rowwise().mean();
    const Matrix xc = x.colwise() - m.mean_x;
    const Matrix yc = y.colwise() - m.mean_y;

    Whitening wx = whiten_between_class(xc, labels, r);
    Whitening wy = whiten_between_class(yc, labels, r);
    const int rank = std::min(wx.rank, wy.rank);
    if (rank < r) {
        fit.warnings.push_back("between-class scatter rank " + std::to_string(rank) + " < requested " + std::to_string(r));
    }
    if (rank < 1) throw NumericError("fit_dca: no discriminative directions (between-class scatter is zero)");
    fit.px = wx.transform.leftCols(rank);
    fit.py = wy.transform.leftCols(rank);

    const Matrix xp = fit.px.transpose() * xc;
    const Matrix yp = fit.py.transpose() * yc;
    const Matrix cross = xp * yp.transpose();
    Eigen::JacobiSVD<Matrix> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector& s = svd.singularValues();
    Matrix u = svd.matrixU();
    Matrix v = svd.matrixV();
    int keep = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s(i) > 1e-10 * s(0) && s(i) > 0.0) ++keep;
    }
    if (keep < rank) fit.warnings.push_back("dropped " + std::to_string(rank - keep) + " zero canonical correlation(s)");
    if (keep < 1) throw NumericError("fit_dca: streams are uncorrelated in the discriminant subspace");
    for (int i = 0; i < keep; ++i) {
        if (fix_sign(u.col(i))) v.col(i) = -v.col(i);
    }
    m.canonical = s.head(keep);
    const Vector inv_sqrt = m.canonical.cwiseSqrt().cwiseInverse();
    m.wx = inv_sqrt.asDiagonal() * u.leftCols(keep).transpose() * fit.px.transpose();
    m.wy = inv_sqrt.asDiagonal() * v.leftCols(keep).transpose() * fit.py.transpose();
    return fit;
}

// (Wx (x - mu_x)) || (Wy (y - mu_y))
inline Vector dca_transform(const DcaModel& m, const Vector& x, const Vector& y) {
    if (x.size() != m.mean_x.size() || y.size() != m.mean_y.size()) {
        throw Error("dca_transform: expected dims (" + std::to_string(m.mean_x.size()) + ", " +
                    std::to_string(m.mean_y.size()) + "), got (" + std::to_string(x.size()) + ", " +
                    std::to_string(y.size()) + ")");
    }
    Vector out(2 * m.rank());
    out << m.wx * (x - m.mean_x), m.wy * (y - m.mean_y);
    return out;
}

}  // namespace histofuse
