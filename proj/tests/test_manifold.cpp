#include <random>
#include <set>

#include <gtest/gtest.h>

#include "histofuse/manifold.hpp"
#include "oracles.hpp"

using namespace histofuse;

namespace {

// n points on a random 2-D plane embedded in `ambient` dimensions, with
// their true planar coordinates.
struct Plane {
    Matrix points;  // ambient x n
    Matrix coords;  // 2 x n
};

Plane random_plane(std::mt19937_64& gen, int n, int ambient, double offset = 0.0) {
    Plane p;
    p.coords = oracle::random_matrix(gen, 2, n, -5.0, 5.0);
    Eigen::HouseholderQR<Matrix> qr(oracle::random_normal(gen, ambient, 2));
    const Matrix basis = qr.householderQ() * Matrix::Identity(ambient, 2);
    p.points = (basis * p.coords).array() + offset;
    return p;
}

Matrix dense_weights(const NeighborGraph& g) {
    const auto n = static_cast<Eigen::Index>(g.n);
    Matrix w = Matrix::Constant(n, n, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < g.n; ++i) {
        w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = 0.0;
        for (const auto& [j, d] : g.adjacency[i]) w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d;
    }
    return w;
}

std::vector<std::size_t> all_ids(std::size_t n) {
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    return ids;
}

}  // namespace

TEST(KnnGraph, CollinearPoints) {
    Matrix pts(1, 3);
    pts << 0, 1, 2;
    const auto g = knn_graph(pts, 1);
    EXPECT_EQ(g.edges(), (std::vector<Edge>{{0, 1, 1.0}, {1, 2, 1.0}}));
    EXPECT_EQ(g.bridges, 0u);
}

TEST(KnnGraph, TwoClustersGetOneBridge) {
    Matrix pts(2, 10);
    for (int i = 0; i < 5; ++i) {
        pts.col(i) << i, 0;
        pts.col(5 + i) << 100 + i, 50;
    }
    const auto g = knn_graph(pts, 2);
    EXPECT_EQ(g.bridges, 1u);
    EXPECT_EQ(g.component_count(), 1u);
    // The bridge joins the two closest points across clusters: 4 and 5.
    const auto edges = g.edges();
    EXPECT_NE(std::find_if(edges.begin(), edges.end(), [](const Edge& e) { return e.i == 4 && e.j == 5; }), edges.end());
}

TEST(KnnGraph, MatchesBruteForceScan) {
    std::mt19937_64 gen(1);
    const Matrix pts = oracle::random_matrix(gen, 5, 100);
    const std::size_t k = 7;
    const auto g = knn_graph(pts, k);
    ASSERT_EQ(g.bridges, 0u);

    const Matrix d = oracle::euclidean_distances(pts);
    std::set<std::pair<std::size_t, std::size_t>> expect;
    for (Eigen::Index i = 0; i < 100; ++i) {
        std::vector<std::pair<double, Eigen::Index>> row;
        for (Eigen::Index j = 0; j < 100; ++j) {
            if (j != i) row.emplace_back(d(i, j), j);
        }
        std::sort(row.begin(), row.end());
        for (std::size_t t = 0; t < k; ++t) {
            const auto a = static_cast<std::size_t>(std::min(i, row[t].second));
            const auto b = static_cast<std::size_t>(std::max(i, row[t].second));
            expect.emplace(a, b);
        }
    }
    std::set<std::pair<std::size_t, std::size_t>> got;
    for (const auto& e : g.edges()) {
        got.emplace(e.i, e.j);
        EXPECT_DOUBLE_EQ(e.weight, d(static_cast<Eigen::Index>(e.i), static_cast<Eigen::Index>(e.j)));
    }
    EXPECT_EQ(got, expect);
}

TEST(KnnGraph, SymmetricWithMinimumDegree) {
    std::mt19937_64 gen(2);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix pts = oracle::random_normal(gen, 3, 40);
        const std::size_t k = 1 + trial % 5;
        const auto g = knn_graph(pts, k);
        EXPECT_EQ(g.component_count(), 1u);
        for (std::size_t i = 0; i < g.n; ++i) {
            EXPECT_GE(g.adjacency[i].size(), k);
            for (const auto& [j, w] : g.adjacency[i]) {
                EXPECT_NE(i, j);
                EXPECT_GT(w, 0.0);
                const auto& back = g.adjacency[j];
                auto it = std::find_if(back.begin(), back.end(), [&](const auto& e) { return e.first == i; });
                ASSERT_NE(it, back.end());
                EXPECT_EQ(it->second, w);
            }
        }
    }
}

TEST(KnnGraph, DuplicatePointsAndPreconditions) {
    Matrix pts = Matrix::Zero(2, 4);
    const auto g = knn_graph(pts, 2);
    EXPECT_EQ(g.component_count(), 1u);
    EXPECT_THROW(knn_graph(pts, 4), Error);
    EXPECT_THROW(knn_graph(pts, 0), Error);
}

TEST(Geodesics, PathGraph) {
    Matrix pts(1, 3);
    pts << 0, 1, 2;
    const auto geo = geodesic_to_landmarks(knn_graph(pts, 1), {0});
    EXPECT_EQ(geo.distances.row(0), (Eigen::RowVector3d(0, 1, 2)));
}

TEST(Geodesics, UnitSquareCycle) {
    NeighborGraph g;
    g.n = 4;
    g.adjacency = {{{1, 1.0}, {3, 1.0}}, {{0, 1.0}, {2, 1.0}}, {{1, 1.0}, {3, 1.0}}, {{0, 1.0}, {2, 1.0}}};
    const auto geo = geodesic_to_landmarks(g, {0, 2});
    EXPECT_EQ(geo.distances.row(0), (Eigen::RowVector4d(0, 1, 2, 1)));
    EXPECT_EQ(geo.distances.row(1), (Eigen::RowVector4d(2, 1, 0, 1)));
}

TEST(Geodesics, MatchFloydWarshall) {
    std::mt19937_64 gen(3);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix pts = oracle::random_normal(gen, 4, 50);
        const auto g = knn_graph(pts, 3);
        const Matrix fw = oracle::floyd_warshall(dense_weights(g));
        const auto geo = geodesic_to_landmarks(g, all_ids(50));
        EXPECT_LE((geo.distances - fw).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Geodesics, LandmarkBlockIsSymmetricWithZeroDiagonal) {
    std::mt19937_64 gen(4);
    const auto g = knn_graph(oracle::random_normal(gen, 3, 60), 4);
    const std::vector<std::size_t> ids{3, 17, 42, 5, 59};
    const auto geo = geodesic_to_landmarks(g, ids);
    const Matrix block = geo.landmark_block();
    for (std::size_t l = 0; l < ids.size(); ++l) EXPECT_EQ(geo.distances(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(ids[l])), 0.0);
    EXPECT_LE((block - block.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GE(geo.distances.minCoeff(), 0.0);
    EXPECT_THROW(geodesic_to_landmarks(g, {1, 1}), Error);
}

TEST(Geodesics, UnreachableNodeIsAnInvariantViolation) {
    NeighborGraph g;
    g.n = 3;
    g.adjacency = {{{1, 1.0}}, {{0, 1.0}}, {}};
    EXPECT_THROW(geodesic_to_landmarks(g, {0}), NumericError);
}

TEST(LandmarkMds, CollinearPoints) {
    Matrix pts(1, 4);
    pts << 0, 1, 2, 3;
    const auto mds = landmark_mds(oracle::euclidean_distances(pts), 1);
    ASSERT_EQ(mds.embedding.rows(), 1);
    const double sign = mds.embedding(0, 0) < 0 ? 1.0 : -1.0;
    const Eigen::RowVector4d expect(-1.5, -0.5, 0.5, 1.5);
    EXPECT_LT((sign * mds.embedding - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LandmarkMds, UnitSquare) {
    Matrix pts(2, 4);
    pts << 0, 1, 1, 0, 0, 0, 1, 1;
    const Matrix d = oracle::euclidean_distances(pts);
    const auto mds = landmark_mds(d, 2);
    EXPECT_LT((oracle::euclidean_distances(mds.embedding) - d).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(LandmarkMds, RandomEuclideanPoints) {
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 5; ++trial) {
        const Matrix pts = oracle::random_normal(gen, 3, 30);
        const Matrix d = oracle::euclidean_distances(pts);
        const auto mds = landmark_mds(d, 3);
        EXPECT_LT((oracle::euclidean_distances(mds.embedding) - d).cwiseAbs().maxCoeff(), 1e-8);
        for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(mds.embedding.row(i).sum(), 0.0, 1e-8);
        EXPECT_GT(mds.eigvals(2), 0.0);
        EXPECT_GE(mds.eigvals(0), mds.eigvals(1));
        EXPECT_GE(mds.eigvals(1), mds.eigvals(2));
        const Vector mean_sq = d.cwiseProduct(d).colwise().mean().transpose();
        EXPECT_LT((mds.mean_sqdist - mean_sq).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(LandmarkMds, RankDeficientInputReducesDimension) {
    Matrix pts(1, 6);
    pts << 0, 1, 2, 4, 7, 8;
    const auto mds = landmark_mds(oracle::euclidean_distances(pts), 3);
    EXPECT_EQ(mds.eigvals.size(), 1);
    EXPECT_EQ(mds.warnings.size(), 1u);
    EXPECT_THROW(landmark_mds(Matrix::Zero(4, 4), 4), Error);
}

TEST(EmbedPoint, LandmarkSelfConsistencyAndCentroid) {
    std::mt19937_64 gen(6);
    // Non-Euclidean (graph) distances: the identity holds regardless.
    const Matrix pts = oracle::random_normal(gen, 5, 40);
    const auto g = knn_graph(pts, 4);
    const Matrix dmm = geodesic_to_landmarks(g, all_ids(40)).landmark_block();
    const auto mds = landmark_mds(0.5 * (dmm + dmm.transpose()), 6);
    CsmlModel model;
    model.embedding = mds.embedding;
    model.pseudo_projection = mds.pseudo_projection;
    model.mean_sqdist = mds.mean_sqdist;
    model.eigvals = mds.eigvals;
    for (Eigen::Index j = 0; j < 40; ++j) {
        const Vector sq = dmm.col(j).cwiseProduct(dmm.col(j));
        EXPECT_LT((embed_point(model, sq) - mds.embedding.col(j)).cwiseAbs().maxCoeff(), 1e-8);
    }
    EXPECT_LT(embed_point(model, model.mean_sqdist).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(EmbedPoint, IsLinear) {
    std::mt19937_64 gen(7);
    const Matrix pts = oracle::random_normal(gen, 3, 20);
    const auto mds = landmark_mds(oracle::euclidean_distances(pts), 3);
    CsmlModel model;
    model.pseudo_projection = mds.pseudo_projection;
    model.mean_sqdist = mds.mean_sqdist;
    for (int trial = 0; trial < 10; ++trial) {
        const Vector a = oracle::random_matrix(gen, 20, 1, 0, 10), b = oracle::random_matrix(gen, 20, 1, 0, 10);
        const Vector lhs = embed_point(model, a) - embed_point(model, b);
        const Vector rhs = -0.5 * model.pseudo_projection * (a - b);
        EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10);
    }
    EXPECT_THROW(embed_point(model, Vector::Zero(19)), Error);
}

TEST(EmbedPoint, HeldOutPlanarPoint) {
    std::mt19937_64 gen(8);
    const Plane plane = random_plane(gen, 101, 6);
    const Matrix land = plane.points.leftCols(100);
    const auto mds = landmark_mds(oracle::euclidean_distances(land), 2);
    CsmlModel model;
    model.pseudo_projection = mds.pseudo_projection;
    model.mean_sqdist = mds.mean_sqdist;
    const auto proc = oracle::fit_procrustes(mds.embedding, plane.coords.leftCols(100));
    EXPECT_LT(oracle::max_col_error(proc.apply(mds.embedding), plane.coords.leftCols(100)), 1e-6);
    Vector sq(100);
    for (Eigen::Index j = 0; j < 100; ++j) sq(j) = (land.col(j) - plane.points.col(100)).squaredNorm();
    EXPECT_LT(oracle::max_col_error(proc.apply(embed_point(model, sq)), plane.coords.col(100)), 1e-6);
}

TEST(FitCsml, AllLandmarksOnCompleteGraphRecoversPlane) {
    std::mt19937_64 gen(9);
    const Plane plane = random_plane(gen, 100, 5);
    CsmlParams p;
    p.landmarks = 100;
    p.k = 99;
    p.dim = 2;
    const auto fit = fit_csml(plane.points, Subclass::A, p, 1);
    EXPECT_EQ(fit.model.landmark_ids, all_ids(100));
    const auto proc = oracle::fit_procrustes(fit.model.embedding, plane.coords);
    EXPECT_LT(oracle::max_col_error(proc.apply(fit.model.embedding), plane.coords), 1e-6);
}

TEST(FitCsml, AllLandmarksEqualsFullIsomap) {
    std::mt19937_64 gen(10);
    const Matrix pts = oracle::swiss_roll(gen, 120);
    CsmlParams p;
    p.landmarks = 120;
    p.k = 8;
    p.dim = 2;
    const auto fit = fit_csml(pts, Subclass::F, p, 3);
    const Matrix geo = oracle::full_isomap_geodesics(pts, 8);
    ASSERT_TRUE(geo.allFinite());
    const Matrix full = oracle::classical_mds(geo, 2);
    EXPECT_LT((oracle::euclidean_distances(fit.model.embedding) - oracle::euclidean_distances(full)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(FitCsml, SwissRollResidualVarianceCloseToFullIsomap) {
    std::mt19937_64 gen(11);
    const Matrix pts = oracle::swiss_roll(gen, 500);
    const Matrix geo = oracle::full_isomap_geodesics(pts, 7);
    ASSERT_TRUE(geo.allFinite());
    const double rv_full = residual_variance(geo, oracle::euclidean_distances(oracle::classical_mds(geo, 2)));

    CsmlParams p;
    p.landmarks = 50;
    p.k = 7;
    p.dim = 2;
    const auto fit = fit_csml(pts, Subclass::TA, p, 5);
    const auto lgeo = geodesic_to_landmarks(knn_graph(pts, 7), fit.model.landmark_ids);
    Matrix emb(2, 500);
    for (Eigen::Index i = 0; i < 500; ++i) emb.col(i) = embed_point(fit.model, lgeo.distances.col(i).cwiseAbs2());
    const double rv_landmark = residual_variance(geo, oracle::euclidean_distances(emb));
    EXPECT_LE(std::abs(rv_landmark - rv_full), 0.05) << "landmark " << rv_landmark << " full " << rv_full;
}

TEST(FitCsml, DeterministicAndCentred) {
    std::mt19937_64 gen(12);
    const Matrix pts = oracle::random_normal(gen, 8, 80);
    CsmlParams p;
    p.landmarks = 30;
    p.k = 6;
    p.dim = 4;
    const auto a = fit_csml(pts, Subclass::PT, p, 99).model;
    const auto b = fit_csml(pts, Subclass::PT, p, 99).model;
    EXPECT_EQ(a.landmark_ids, b.landmark_ids);
    EXPECT_EQ(a.embedding, b.embedding);
    EXPECT_EQ(a.pseudo_projection, b.pseudo_projection);
    const auto c = fit_csml(pts, Subclass::PT, p, 100).model;
    EXPECT_NE(a.landmark_ids, c.landmark_ids);
    for (Eigen::Index i = 0; i < a.embedding.rows(); ++i) EXPECT_NEAR(a.embedding.row(i).sum(), 0.0, 1e-8);
    for (Eigen::Index i = 1; i < a.eigvals.size(); ++i) EXPECT_GE(a.eigvals(i - 1), a.eigvals(i));
    EXPECT_GT(a.eigvals.minCoeff(), 0.0);
}

TEST(FitCsml, SmallClassReducesLandmarks) {
    std::mt19937_64 gen(13);
    CsmlParams p;
    p.landmarks = 50;
    p.k = 5;
    p.dim = 3;
    const auto fit = fit_csml(oracle::random_normal(gen, 4, 20), Subclass::MC, p, 1);
    EXPECT_EQ(fit.model.landmark_count(), 20);
    EXPECT_FALSE(fit.warnings.empty());
    p.dim = 25;
    EXPECT_THROW(fit_csml(oracle::random_normal(gen, 4, 20), Subclass::MC, p, 1), Error);
}

TEST(CsmlTransform, LandmarkSampleReproducesEmbeddingColumn) {
    std::mt19937_64 gen(14);
    const Matrix pts = oracle::random_normal(gen, 6, 60);
    CsmlParams p;
    p.landmarks = 20;
    p.k = 6;
    p.dim = 3;
    const auto model = fit_csml(pts, Subclass::DC, p, 2).model;
    for (int j = 0; j < model.landmark_count(); ++j) {
        const Vector y = csml_transform({model}, model.landmarks.col(j), 1);
        EXPECT_LT((y - model.embedding.col(j)).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(CsmlTransform, DegenerateZeroData) {
    CsmlParams p;
    p.landmarks = 5;
    p.k = 2;
    p.dim = 2;
    const auto fit = fit_csml(Matrix::Zero(3, 8), Subclass::A, p, 1);
    EXPECT_EQ(fit.model.dim(), 0);
    const Vector y = csml_transform({fit.model}, Vector::Zero(3), 3);
    EXPECT_EQ(y, Vector::Zero(2));
}

TEST(CsmlTransform, TwoPlanesHeldOut) {
    std::mt19937_64 gen(15);
    CsmlParams p;
    p.landmarks = 40;
    p.k = 39;
    p.dim = 2;
    std::vector<CsmlModel> models;
    std::vector<Plane> planes;
    for (int c = 0; c < 2; ++c) {
        planes.push_back(random_plane(gen, 50, 4, c == 0 ? 0.0 : 100.0));
        models.push_back(fit_csml(planes.back().points.leftCols(40), c == 0 ? Subclass::A : Subclass::F, p, 7).model);
    }
    for (int c = 0; c < 2; ++c) {
        const auto& m = models[static_cast<std::size_t>(c)];
        Matrix truth_land(2, 40);
        for (int l = 0; l < 40; ++l) truth_land.col(l) = planes[static_cast<std::size_t>(c)].coords.col(static_cast<Eigen::Index>(m.landmark_ids[static_cast<std::size_t>(l)]));
        const auto proc = oracle::fit_procrustes(m.embedding, truth_land);
        for (Eigen::Index i = 40; i < 50; ++i) {
            // k_infer = m routes through the landmark itself, so the estimate
            // equals the Euclidean distance on a complete graph.
            const Vector h = csml_transform(models, planes[static_cast<std::size_t>(c)].points.col(i), 40);
            ASSERT_EQ(h.size(), 4);
            EXPECT_LT(oracle::max_col_error(proc.apply(h.segment(2 * c, 2)), planes[static_cast<std::size_t>(c)].coords.col(i)), 1e-6);
        }
    }
}

TEST(CsmlTransform, MissingClassModel) {
    EXPECT_THROW(csml_transform({}, Vector::Zero(3), 3), Error);
    CsmlModel a;
    a.subclass = Subclass::A;
    EXPECT_THROW(order_models({a}, {Subclass::A, Subclass::F}), Error);
    EXPECT_EQ(order_models({a}, {Subclass::A}).size(), 1u);
}
