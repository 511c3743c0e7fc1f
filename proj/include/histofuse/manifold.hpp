#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <string>
#include <tuple>
#include <vector>

#include "histofuse/core.hpp"

namespace histofuse {

// ---------------------------------------------------------------------------
// k-nearest-neighbour graph

struct Edge {
    std::size_t i = 0;
    std::size_t j = 0;
    double weight = 0.0;

    bool operator==(const Edge&) const = default;
};

struct NeighborGraph {
    std::size_t n = 0;
    std::vector<std::vector<std::pair<std::size_t, double>>> adjacency;
    std::size_t bridges = 0;  // edges added to reconnect components

    // Each undirected edge once, i < j, sorted.
    std::vector<Edge> edges() const {
        std::vector<Edge> out;
        for (std::size_t i = 0; i < n; ++i) {
            for (const auto& [j, w] : adjacency[i]) {
                if (i < j) out.push_back({i, j, w});
            }
        }
        std::sort(out.begin(), out.end(), [](const Edge& a, const Edge& b) { return std::tie(a.i, a.j) < std::tie(b.i, b.j); });
        return out;
    }

    std::size_t component_count() const {
        std::vector<int> seen(n, 0);
        std::size_t comps = 0;
        std::vector<std::size_t> stack;
        for (std::size_t s = 0; s < n; ++s) {
            if (seen[s]) continue;
            ++comps;
            stack.push_back(s);
            seen[s] = 1;
            while (!stack.empty()) {
                const auto u = stack.back();
                stack.pop_back();
                for (const auto& [v, w] : adjacency[u]) {
                    if (!seen[v]) {
                        seen[v] = 1;
                        stack.push_back(v);
                    }
                }
            }
        }
        return comps;
    }
};

namespace detail {

class DisjointSets {
public:
    explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        parent_[std::max(a, b)] = std::min(a, b);
        return true;
    }

private:
    std::vector<std::size_t> parent_;
};

}  // namespace detail

// Pairwise Euclidean distances between the columns of `points`.
inline Matrix pairwise_distances(const Matrix& points) {
    const Eigen::Index n = points.cols();
    Matrix d(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d(i, i) = 0.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = (points.col(i) - points.col(j)).norm();
            d(i, j) = v;
            d(j, i) = v;
        }
    }
    return d;
}

// Symmetrized k-NN graph over the columns of `points`. Distance ties go to
// the lower index. Disconnected graphs are repaired by repeatedly adding the
// shortest edge between two different components.
inline NeighborGraph knn_graph(const Matrix& points, std::size_t k) {
    const auto n = static_cast<std::size_t>(points.cols());
    if (k < 1 || n <= k) throw Error("knn_graph needs n > k >= 1 (n=" + std::to_string(n) + ", k=" + std::to_string(k) + ")");
    const Matrix dist = pairwise_distances(points);

    NeighborGraph g;
    g.n = n;
    g.adjacency.assign(n, {});
    std::vector<std::vector<char>> linked(n, std::vector<char>(n, 0));
    auto link = [&](std::size_t i, std::size_t j) {
        if (linked[i][j]) return;
        linked[i][j] = linked[j][i] = 1;
        const double w = dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        g.adjacency[i].emplace_back(j, w);
        g.adjacency[j].emplace_back(i, w);
    };

    std::vector<std::size_t> order;
    order.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        order.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) order.push_back(j);
        }
        const auto row = static_cast<Eigen::Index>(i);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](std::size_t a, std::size_t b) {
                              const double da = dist(row, static_cast<Eigen::Index>(a));
                              const double db = dist(row, static_cast<Eigen::Index>(b));
                              return da != db ? da < db : a < b;
                          });
        for (std::size_t t = 0; t < k; ++t) link(i, order[t]);
    }

    detail::DisjointSets sets(n);
    std::size_t comps = n;
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& [j, w] : g.adjacency[i]) {
            if (sets.unite(i, j)) --comps;
        }
    }
    while (comps > 1) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0, bj = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                if (sets.find(i) == sets.find(j)) continue;
                const double d = dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                if (d < best) {
                    best = d;
                    bi = i;
                    bj = j;
                }
            }
        }
        link(bi, bj);
        sets.unite(bi, bj);
        ++g.bridges;
        --comps;
    }
    for (auto& adj : g.adjacency) std::sort(adj.begin(), adj.end());
    return g;
}

// ---------------------------------------------------------------------------
// Geodesics

struct GeodesicMatrix {
    Matrix distances;  // m x n
    std::vector<std::size_t> landmark_ids;

    // m x m block restricted to landmark columns.
    Matrix landmark_block() const {
        const auto m = static_cast<Eigen::Index>(landmark_ids.size());
        Matrix out(m, m);
        for (Eigen::Index p = 0; p < m; ++p) {
            for (Eigen::Index q = 0; q < m; ++q) out(p, q) = distances(p, static_cast<Eigen::Index>(landmark_ids[q]));
        }
        return out;
    }
};

inline std::vector<double> shortest_paths(const NeighborGraph& g, std::size_t source) {
    std::vector<double> d(g.n, std::numeric_limits<double>::infinity());
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    d[source] = 0.0;
    heap.emplace(0.0, source);
    while (!heap.empty()) {
        const auto [du, u] = heap.top();
        heap.pop();
        if (du > d[u]) continue;
        for (const auto& [v, w] : g.adjacency[u]) {
            const double nd = du + w;
            if (nd < d[v]) {
                d[v] = nd;
                heap.emplace(nd, v);
            }
        }
    }
    return d;
}

inline GeodesicMatrix geodesic_to_landmarks(const NeighborGraph& g, const std::vector<std::size_t>& landmark_ids) {
    std::vector<std::size_t> sorted = landmark_ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw Error("landmark ids must be distinct");
    GeodesicMatrix out;
    out.landmark_ids = landmark_ids;
    out.distances.resize(static_cast<Eigen::Index>(landmark_ids.size()), static_cast<Eigen::Index>(g.n));
    for (std::size_t l = 0; l < landmark_ids.size(); ++l) {
        if (landmark_ids[l] >= g.n) throw Error("landmark id out of range");
        const auto d = shortest_paths(g, landmark_ids[l]);
        for (std::size_t v = 0; v < g.n; ++v) {
            if (!std::isfinite(d[v])) {
                throw NumericError("node " + std::to_string(v) + " unreachable from landmark " + std::to_string(landmark_ids[l]));
            }
            out.distances(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(v)) = d[v];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Landmark MDS

inline constexpr double kEigenFloor = 1e-10;

struct LandmarkEmbedding {
    Matrix embedding;           // d x m
    Matrix pseudo_projection;   // d x m
    Vector eigvals;             // d, descending, positive
    Vector mean_sqdist;         // m
    Warnings warnings;
};

// Classical MDS on the double-centred element-wise squared distances.
inline LandmarkEmbedding landmark_mds(const Matrix& dmm, int dim) {
    const Eigen::Index m = dmm.rows();
    if (dmm.cols() != m) throw Error("landmark distance matrix must be square");
    if (dim < 1 || dim > m - 1) throw Error("MDS dimension must be in [1, m-1]");

    const Matrix sq = dmm.cwiseProduct(dmm);
    LandmarkEmbedding out;
    out.mean_sqdist = sq.colwise().mean().transpose();
    const Matrix centred = sq.rowwise() - sq.colwise().mean();
    const Matrix b = -0.5 * (centred.colwise() - centred.rowwise().mean());
    const Matrix sym = 0.5 * (b + b.transpose());

    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
    if (eig.info() != Eigen::Success) throw NumericError("eigendecomposition failed in landmark MDS");
    const Vector& vals = eig.eigenvalues();
    const double top = vals(m - 1);
    int kept = 0;
    for (int i = 0; i < dim; ++i) {
        const double v = vals(m - 1 - i);
        if (!(top > 0.0) || !(v > kEigenFloor * top)) break;
        ++kept;
    }
    if (kept < dim) {
        out.warnings.push_back("landmark MDS kept " + std::to_string(kept) + " of " + std::to_string(dim) +
                               " requested dimensions (non-positive spectrum)");
    }
    out.embedding.resize(kept, m);
    out.pseudo_projection.resize(kept, m);
    out.eigvals.resize(kept);
    for (int i = 0; i < kept; ++i) {
        Vector v = eig.eigenvectors().col(m - 1 - i);
        fix_sign(v);
        const double lambda = vals(m - 1 - i);
        out.eigvals(i) = lambda;
        out.embedding.row(i) = std::sqrt(lambda) * v.transpose();
        out.pseudo_projection.row(i) = v.transpose() / std::sqrt(lambda);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Class-specific models

struct CsmlModel {
    Subclass subclass = Subclass::DC;
    int out_dim = 0;                         // width of this model's block in the holistic vector
    std::vector<std::size_t> landmark_ids;   // indices into the training set (provenance only)
    Matrix landmarks;                        // input_dim x m
    Matrix landmark_geodesics;               // m x m
    Matrix embedding;                        // d x m
    Matrix pseudo_projection;                // d x m
    Vector mean_sqdist;                      // m
    Vector eigvals;                          // d

    int dim() const { return static_cast<int>(eigvals.size()); }
    int landmark_count() const { return static_cast<int>(landmarks.cols()); }
};

// y = -1/2 * L# * (delta - mean_sqdist)
inline Vector embed_point(const CsmlModel& model, const Vector& sqdist_to_landmarks) {
    if (sqdist_to_landmarks.size() != model.mean_sqdist.size()) throw Error("embed_point: landmark count mismatch");
    return -0.5 * model.pseudo_projection * (sqdist_to_landmarks - model.mean_sqdist);
}

struct CsmlParams {
    int landmarks = 300;
    int k = 12;
    int dim = 20;
    int k_infer = 3;
    int max_graph_samples = 2000;  // class samples beyond this are subsampled before graph construction
};

struct CsmlFit {
    CsmlModel model;
    Warnings warnings;
};

// Landmarks are sampled without replacement; the graph spans every sample.
inline CsmlFit fit_csml(const Matrix& all_vectors, Subclass subclass, const CsmlParams& params, std::uint64_t seed) {
    CsmlFit out;
    Rng rng(seed);
    Matrix subsampled;
    const bool cap = params.max_graph_samples > 0 && all_vectors.cols() > params.max_graph_samples;
    if (cap) {
        std::vector<Eigen::Index> keep(static_cast<std::size_t>(all_vectors.cols()));
        std::iota(keep.begin(), keep.end(), 0);
        rng.shuffle(keep);
        keep.resize(static_cast<std::size_t>(params.max_graph_samples));
        std::sort(keep.begin(), keep.end());
        subsampled.resize(all_vectors.rows(), params.max_graph_samples);
        for (std::size_t i = 0; i < keep.size(); ++i) subsampled.col(static_cast<Eigen::Index>(i)) = all_vectors.col(keep[i]);
        out.warnings.push_back("class " + std::string(to_string(subclass)) + ": graph built on " +
                               std::to_string(params.max_graph_samples) + " of " + std::to_string(all_vectors.cols()) +
                               " samples");
    }
    const Matrix& class_vectors = cap ? subsampled : all_vectors;
    const auto n = static_cast<std::size_t>(class_vectors.cols());
    auto m = static_cast<std::size_t>(params.landmarks);
    if (n < m) {
        out.warnings.push_back("class " + std::string(to_string(subclass)) + " has " + std::to_string(n) +
                               " samples; landmark count reduced from " + std::to_string(m));
        m = n;
    }
    if (m < static_cast<std::size_t>(params.dim) + 1) {
        throw Error("class " + std::string(to_string(subclass)) + " needs at least dim+1 = " +
                    std::to_string(params.dim + 1) + " samples");
    }
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(params.k), n - 1);

    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    for (std::size_t i = 0; i < m; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(ids[i], ids[j]);
    }
    ids.resize(m);
    std::sort(ids.begin(), ids.end());

    const NeighborGraph g = knn_graph(class_vectors, k);
    if (g.bridges > 0) {
        out.warnings.push_back("class " + std::string(to_string(subclass)) + ": k-NN graph reconnected with " +
                               std::to_string(g.bridges) + " bridge edge(s)");
    }
    const GeodesicMatrix geo = geodesic_to_landmarks(g, ids);
    Matrix dmm = geo.landmark_block();
    dmm = 0.5 * (dmm + dmm.transpose()).eval();
    auto mds = landmark_mds(dmm, params.dim);
    for (auto& w : mds.warnings) out.warnings.push_back(std::string(to_string(subclass)) + ": " + w);

    CsmlModel& model = out.model;
    model.subclass = subclass;
    model.out_dim = params.dim;
    model.landmark_ids = ids;
    model.landmarks.resize(class_vectors.rows(), static_cast<Eigen::Index>(m));
    for (std::size_t l = 0; l < m; ++l) model.landmarks.col(static_cast<Eigen::Index>(l)) = class_vectors.col(static_cast<Eigen::Index>(ids[l]));
    model.landmark_geodesics = dmm;
    model.embedding = std::move(mds.embedding);
    model.pseudo_projection = std::move(mds.pseudo_projection);
    model.mean_sqdist = std::move(mds.mean_sqdist);
    model.eigvals = std::move(mds.eigvals);
    return out;
}

// Squared geodesic estimates from a sample to every landmark, routed through
// its k_infer nearest landmarks.
inline Vector approx_sqdist_to_landmarks(const CsmlModel& model, const Vector& sample, int k_infer) {
    const Eigen::Index m = model.landmarks.cols();
    if (sample.size() != model.landmarks.rows()) throw Error("csml: sample dimension mismatch");
    Vector direct(m);
    for (Eigen::Index j = 0; j < m; ++j) direct(j) = (model.landmarks.col(j) - sample).norm();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    const auto kk = static_cast<std::ptrdiff_t>(std::clamp<Eigen::Index>(k_infer, 1, m));
    std::partial_sort(order.begin(), order.begin() + kk, order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return direct(a) != direct(b) ? direct(a) < direct(b) : a < b;
    });
    Vector out(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        double best = std::numeric_limits<double>::infinity();
        for (std::ptrdiff_t t = 0; t < kk; ++t) {
            const Eigen::Index p = order[static_cast<std::size_t>(t)];
            best = std::min(best, direct(p) + model.landmark_geodesics(p, j));
        }
        out(j) = best * best;
    }
    return out;
}

// Holistic vector: per-model embeddings concatenated in model order, each
// block zero padded to the model's out_dim.
inline Vector csml_transform(const std::vector<CsmlModel>& models, const Vector& sample, int k_infer) {
    if (models.empty()) throw Error("csml_transform: no class models");
    Eigen::Index total = 0;
    for (const auto& m : models) total += m.out_dim;
    Vector out = Vector::Zero(total);
    Eigen::Index at = 0;
    for (const auto& m : models) {
        const Vector y = embed_point(m, approx_sqdist_to_landmarks(m, sample, k_infer));
        out.segment(at, y.size()) = y;
        at += m.out_dim;
    }
    return out;
}

// Models in canonical subclass order; throws if a required class is absent.
inline std::vector<CsmlModel> order_models(std::vector<CsmlModel> models, const std::vector<Subclass>& required) {
    std::vector<CsmlModel> out;
    for (auto s : required) {
        auto it = std::find_if(models.begin(), models.end(), [&](const CsmlModel& m) { return m.subclass == s; });
        if (it == models.end()) throw Error("missing class model for " + std::string(to_string(s)));
        out.push_back(std::move(*it));
    }
    return out;
}

// Residual variance 1 - r^2 between two sets of pairwise distances (upper
// triangles).
inline double residual_variance(const Matrix& a, const Matrix& b) {
    std::vector<double> x, y;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < a.cols(); ++j) {
            x.push_back(a(i, j));
            y.push_back(b(i, j));
        }
    }
    const auto n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    const double r = sxy / std::sqrt(sxx * syy);
    return 1.0 - r * r;
}

}  // namespace histofuse
