#include "qcmorph/clustering.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <random>

namespace qcm {

namespace {

double point_distance(const double* a, const double* b, int dim) {
    double s = 0;
    for (int d = 0; d < dim; ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
    return std::sqrt(s);
}

double stress_of(const std::vector<double>& coords, int n, int p, const DissimilarityMatrix& D) {
    double s = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double d = point_distance(coords.data() + i * p, coords.data() + j * p, p);
            s += (d - D(i, j)) * (d - D(i, j));
        }
    return s;
}

/// Canonical relabeling: cluster of the lowest specimen index becomes 1, the
/// next unseen cluster 2, and so on.
void canonicalize_labels(std::vector<int>& labels) {
    std::map<int, int> remap;
    int next = 1;
    for (int& l : labels) {
        auto [it, inserted] = remap.try_emplace(l, next);
        if (inserted) ++next;
        l = it->second;
    }
}

}  // namespace

EmbeddingCoords mds(const DissimilarityMatrix& D, int p) {
    const int n = D.size();
    if (n < 1) throw InputError("mds: empty dissimilarity matrix");
    if (p < 1 || p > std::max(1, n - 1)) throw InputError("mds: target dimension out of range [1, n-1]");

    EmbeddingCoords emb;
    emb.dimension = p;
    emb.coords.assign(static_cast<std::size_t>(n) * p, 0.0);
    if (n == 1) return emb;

    // Classical scaling: B = -1/2 J D∘D J, top-p spectral coordinates.
    Eigen::MatrixXd sq(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) sq(i, j) = D(i, j) * D(i, j);
    Eigen::VectorXd row_mean = sq.rowwise().mean();
    double total_mean = sq.mean();
    Eigen::MatrixXd B(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) B(i, j) = -0.5 * (sq(i, j) - row_mean(i) - row_mean(j) + total_mean);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(B);
    if (eig.info() != Eigen::Success) throw NumericalError("mds: eigendecomposition failed");
    // Eigenvalues come in ascending order; use the largest p, clamped at zero.
    for (int d = 0; d < p; ++d) {
        double lambda = eig.eigenvalues()(n - 1 - d);
        if (lambda <= 0) continue;
        double scale = std::sqrt(lambda);
        for (int i = 0; i < n; ++i) emb.coords[i * p + d] = scale * eig.eigenvectors()(i, n - 1 - d);
    }

    // Metric-stress majorization (the Guttman transform with unit weights;
    // the classical-MDS start is centered and the transform keeps it so).
    double prev = stress_of(emb.coords, n, p, D);
    std::vector<double> next(emb.coords.size());
    for (int it = 0; it < 300; ++it) {
        std::fill(next.begin(), next.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                double dist = point_distance(emb.coords.data() + i * p, emb.coords.data() + j * p, p);
                double ratio = dist > 1e-300 ? D(i, j) / dist : 0.0;
                for (int d = 0; d < p; ++d)
                    next[i * p + d] += ratio * (emb.coords[i * p + d] - emb.coords[j * p + d]);
            }
            for (int d = 0; d < p; ++d) next[i * p + d] /= n;
        }
        emb.coords.swap(next);
        double cur = stress_of(emb.coords, n, p, D);
        if (prev - cur <= 1e-12 * std::max(prev, 1e-300)) {
            prev = cur;
            break;
        }
        prev = cur;
    }
    emb.stress = prev;
    return emb;
}

std::vector<double> mds_insert_point(const EmbeddingCoords& emb, const std::vector<double>& dissim_row) {
    const int n = emb.point_count();
    const int p = emb.dimension;
    if (static_cast<int>(dissim_row.size()) != n) throw InputError("mds_insert_point: row length mismatch");
    if (n == 0) return std::vector<double>(p, 0.0);

    // Majorize Σ_j (‖x − xj‖ − dj)² starting from the centroid of the three
    // nearest training points (by dissimilarity).
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dissim_row[a] < dissim_row[b]; });
    std::vector<double> x(p, 0.0);
    int m = std::min(3, n);
    for (int r = 0; r < m; ++r)
        for (int d = 0; d < p; ++d) x[d] += emb.coords[order[r] * p + d] / m;

    for (int it = 0; it < 200; ++it) {
        std::vector<double> next(p, 0.0);
        for (int j = 0; j < n; ++j) {
            double dist = point_distance(x.data(), emb.coords.data() + j * p, p);
            double ratio = dist > 1e-300 ? dissim_row[j] / dist : 0.0;
            for (int d = 0; d < p; ++d)
                next[d] += emb.coords[j * p + d] + ratio * (x[d] - emb.coords[j * p + d]);
        }
        double delta = 0;
        for (int d = 0; d < p; ++d) {
            next[d] /= n;
            delta += (next[d] - x[d]) * (next[d] - x[d]);
        }
        x.swap(next);
        if (delta <= 1e-24) break;
    }
    return x;
}

ClusterLabels hierarchical_cluster(const DissimilarityMatrix& D, int k, Linkage linkage) {
    const int n = D.size();
    if (k < 1 || k > n) throw InputError("hierarchical_cluster: k out of range [1, n]");

    // Active clusters keyed by their smallest member index.
    std::vector<std::vector<int>> members(n);
    std::vector<bool> active(n, true);
    for (int i = 0; i < n; ++i) members[i] = {i};
    std::vector<double> dist(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) dist[i * n + j] = D(i, j);

    int active_count = n;
    while (active_count > k) {
        int best_i = -1, best_j = -1;
        double best = std::numeric_limits<double>::max();
        for (int i = 0; i < n; ++i) {
            if (!active[i]) continue;
            for (int j = i + 1; j < n; ++j) {
                if (!active[j]) continue;
                if (dist[i * n + j] < best) {  // strict: first (lowest-index) pair wins ties
                    best = dist[i * n + j];
                    best_i = i;
                    best_j = j;
                }
            }
        }
        // Lance-Williams update of the merged cluster's distances.
        int ni = static_cast<int>(members[best_i].size());
        int nj = static_cast<int>(members[best_j].size());
        for (int m = 0; m < n; ++m) {
            if (!active[m] || m == best_i || m == best_j) continue;
            double dim = dist[best_i * n + m], djm = dist[best_j * n + m];
            double merged;
            switch (linkage) {
                case Linkage::Single: merged = std::min(dim, djm); break;
                case Linkage::Complete: merged = std::max(dim, djm); break;
                default: merged = (ni * dim + nj * djm) / (ni + nj); break;
            }
            dist[best_i * n + m] = dist[m * n + best_i] = merged;
        }
        members[best_i].insert(members[best_i].end(), members[best_j].begin(), members[best_j].end());
        active[best_j] = false;
        --active_count;
    }

    ClusterLabels out;
    out.method = "hierarchical";
    out.k = k;
    out.labels.assign(n, 0);
    for (int i = 0; i < n; ++i)
        if (active[i])
            for (int v : members[i]) out.labels[v] = i + 1;
    canonicalize_labels(out.labels);
    return out;
}

namespace {

struct KmeansRun {
    std::vector<int> assignment;
    double wcss = std::numeric_limits<double>::max();
};

KmeansRun lloyd_once(const EmbeddingCoords& points, int k, std::uint64_t seed) {
    const int n = points.point_count();
    const int p = points.dimension;
    std::mt19937_64 rng(seed);

    // k-means++ seeding
    std::vector<double> centers(static_cast<std::size_t>(k) * p);
    std::uniform_int_distribution<int> uni(0, n - 1);
    int first = uni(rng);
    std::copy_n(points.coords.data() + first * p, p, centers.data());
    std::vector<double> min_d2(n);
    for (int c = 1; c < k; ++c) {
        double total = 0;
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            for (int cc = 0; cc < c; ++cc) {
                double d = point_distance(points.coords.data() + i * p, centers.data() + cc * p, p);
                best = std::min(best, d * d);
            }
            min_d2[i] = best;
            total += best;
        }
        int chosen;
        if (total <= 0) {
            chosen = uni(rng);
        } else {
            std::uniform_real_distribution<double> ur(0.0, total);
            double r = ur(rng);
            chosen = n - 1;
            double acc = 0;
            for (int i = 0; i < n; ++i) {
                acc += min_d2[i];
                if (r <= acc) {
                    chosen = i;
                    break;
                }
            }
        }
        std::copy_n(points.coords.data() + chosen * p, p, centers.data() + c * p);
    }

    std::vector<int> assign(n, -1);
    std::vector<int> counts(k);
    for (int iter = 0; iter < 200; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::max();
            for (int c = 0; c < k; ++c) {
                double d = point_distance(points.coords.data() + i * p, centers.data() + c * p, p);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        // Empty clusters grab the point farthest from its center.
        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < n; ++i) ++counts[assign[i]];
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            int worst = -1;
            double worst_d = -1;
            for (int i = 0; i < n; ++i) {
                if (counts[assign[i]] <= 1) continue;
                double d = point_distance(points.coords.data() + i * p, centers.data() + assign[i] * p, p);
                if (d > worst_d) {
                    worst_d = d;
                    worst = i;
                }
            }
            if (worst >= 0) {
                --counts[assign[worst]];
                assign[worst] = c;
                ++counts[c];
                changed = true;
            }
        }
        std::fill(centers.begin(), centers.end(), 0.0);
        for (int i = 0; i < n; ++i)
            for (int d = 0; d < p; ++d) centers[assign[i] * p + d] += points.coords[i * p + d];
        for (int c = 0; c < k; ++c)
            if (counts[c] > 0)
                for (int d = 0; d < p; ++d) centers[c * p + d] /= counts[c];
        if (!changed) break;
    }

    KmeansRun run;
    run.assignment = assign;
    run.wcss = 0;
    for (int i = 0; i < n; ++i) {
        double d = point_distance(points.coords.data() + i * p, centers.data() + assign[i] * p, p);
        run.wcss += d * d;
    }
    return run;
}

}  // namespace

ClusterLabels kmeans(const EmbeddingCoords& points, int k, int replicates, std::uint64_t seed) {
    const int n = points.point_count();
    if (k < 1 || k > n) throw InputError("kmeans: k out of range [1, n]");
    if (replicates < 1) throw InputError("kmeans: replicates must be >= 1");

    // Replicate seeds are drawn up front so replicates stay independent.
    std::mt19937_64 master(seed);
    std::vector<std::uint64_t> rep_seeds(replicates);
    for (auto& s : rep_seeds) s = master();

    KmeansRun best;
    for (int r = 0; r < replicates; ++r) {
        KmeansRun run = lloyd_once(points, k, rep_seeds[r]);
        if (run.wcss < best.wcss) best = run;  // strict: earliest replicate wins ties
    }

    ClusterLabels out;
    out.method = "kmeans";
    out.k = k;
    out.seed = seed;
    out.wcss = best.wcss;
    out.labels.resize(n);
    for (int i = 0; i < n; ++i) out.labels[i] = best.assignment[i] + 1;
    canonicalize_labels(out.labels);
    return out;
}

double pairwise_accuracy(const ClusterLabels& labels, const ClusterLabels& truth) {
    const int n = labels.size();
    if (n != truth.size()) throw InputError("pairwise_accuracy: label vectors differ in length");
    if (n < 2) return 1.0;
    long correct = 0, total = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            bool same_pred = labels.labels[i] == labels.labels[j];
            bool same_true = truth.labels[i] == truth.labels[j];
            correct += same_pred == same_true;
            ++total;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

double loocv(const DissimilarityMatrix& D, const ClusterLabels& truth, const LoocvParams& params) {
    const int n = D.size();
    if (n < 3) throw InputError("loocv: needs at least 3 specimens");
    if (truth.size() != n) throw InputError("loocv: truth labels length mismatch");
    int k = params.k;
    if (k == 0) k = *std::max_element(truth.labels.begin(), truth.labels.end());
    if (k < 1 || k > n - 1) throw InputError("loocv: k out of range");

    int correct = 0;
    for (int held = 0; held < n; ++held) {
        std::vector<int> train;
        for (int i = 0; i < n; ++i)
            if (i != held) train.push_back(i);
        const int m = static_cast<int>(train.size());

        DissimilarityMatrix sub;
        sub.ids.resize(m);
        sub.weights = D.weights;
        sub.values.assign(static_cast<std::size_t>(m) * m, 0.0);
        for (int a = 0; a < m; ++a) {
            sub.ids[a] = D.ids.empty() ? std::to_string(train[a]) : D.ids[train[a]];
            for (int b = 0; b < m; ++b) sub.values[a * m + b] = D(train[a], train[b]);
        }

        int p = std::min(params.mds_dimension, m - 1);
        EmbeddingCoords emb = mds(sub, p);
        ClusterLabels fit = kmeans(emb, k, params.replicates, params.seed + static_cast<std::uint64_t>(held));

        // Majority truth class per fitted cluster (ties -> smaller class id).
        std::vector<std::map<int, int>> votes(k + 1);
        for (int a = 0; a < m; ++a) ++votes[fit.labels[a]][truth.labels[train[a]]];
        std::vector<int> cluster_class(k + 1, 0);
        for (int c = 1; c <= k; ++c) {
            int best_class = 0, best_count = -1;
            for (const auto& [cls, count] : votes[c]) {
                if (count > best_count) {
                    best_count = count;
                    best_class = cls;
                }
            }
            if (best_count <= 0) throw NumericalError("loocv: empty cluster in fold " + std::to_string(held));
            cluster_class[c] = best_class;
        }

        std::vector<double> row(m);
        for (int a = 0; a < m; ++a) row[a] = D(held, train[a]);
        std::vector<double> x = mds_insert_point(emb, row);

        // Nearest centroid of the fitted clusters.
        std::vector<std::vector<double>> centroids(k + 1, std::vector<double>(p, 0.0));
        std::vector<int> counts(k + 1, 0);
        for (int a = 0; a < m; ++a) {
            ++counts[fit.labels[a]];
            for (int d = 0; d < p; ++d) centroids[fit.labels[a]][d] += emb.coords[a * p + d];
        }
        int nearest = 1;
        double nearest_d = std::numeric_limits<double>::max();
        for (int c = 1; c <= k; ++c) {
            if (counts[c] == 0) continue;
            for (int d = 0; d < p; ++d) centroids[c][d] /= counts[c];
            double dd = point_distance(x.data(), centroids[c].data(), p);
            if (dd < nearest_d) {
                nearest_d = dd;
                nearest = c;
            }
        }
        correct += cluster_class[nearest] == truth.labels[held];
    }
    return static_cast<double>(correct) / n;
}

double procrustes_baseline(const std::vector<Vec3>& landmarks1, const std::vector<Vec3>& landmarks2) {
    const int k = static_cast<int>(landmarks1.size());
    if (k < 3 || landmarks2.size() != landmarks1.size())
        throw InputError("procrustes_baseline: need equal landmark counts >= 3");

    Eigen::MatrixXd X(k, 3), Y(k, 3);
    for (int i = 0; i < k; ++i) {
        X.row(i) = landmarks1[i].transpose();
        Y.row(i) = landmarks2[i].transpose();
    }
    X.rowwise() -= X.colwise().mean();
    Y.rowwise() -= Y.colwise().mean();
    double sx = std::sqrt(X.squaredNorm() / k);
    double sy = std::sqrt(Y.squaredNorm() / k);
    if (sx <= 0 || sy <= 0) throw NumericalError("procrustes_baseline: degenerate (coincident) landmarks");
    X /= sx;
    Y /= sy;
    // Check for (near-)collinear configurations: rank of either set < 2.
    Eigen::JacobiSVD<Eigen::MatrixXd> rank_check(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (rank_check.singularValues()(1) < 1e-12 * rank_check.singularValues()(0))
        throw NumericalError("procrustes_baseline: collinear landmark configuration");

    // Optimal rotation (no reflection) and scale for min ‖Y − s X R‖².
    Eigen::Matrix3d M = X.transpose() * Y;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
    Eigen::Vector3d sig = svd.singularValues();
    Eigen::Matrix3d S = Eigen::Matrix3d::Identity();
    if ((U * V.transpose()).determinant() < 0) S(2, 2) = -1;
    Eigen::Matrix3d R = U * S * V.transpose();
    double trace = (sig.asDiagonal() * S).trace();
    double scale = trace / X.squaredNorm();
    double rss = (Y - scale * X * R).squaredNorm();
    return std::sqrt(std::max(rss, 0.0) / k);
}

void export_coords_csv(const EmbeddingCoords& coords, const std::vector<std::string>& ids,
                       const std::filesystem::path& path) {
    std::FILE* out = std::fopen(path.string().c_str(), "w");
    if (!out) throw InputError("cannot open " + path.string() + " for writing");
    std::fprintf(out, "id");
    for (int d = 0; d < coords.dimension; ++d) std::fprintf(out, ",x%d", d + 1);
    std::fprintf(out, "\n");
    for (int i = 0; i < coords.point_count(); ++i) {
        std::fprintf(out, "%s", ids[i].c_str());
        for (int d = 0; d < coords.dimension; ++d)
            std::fprintf(out, ",%.17g", coords.coords[i * coords.dimension + d]);
        std::fprintf(out, "\n");
    }
    std::fclose(out);
}

}  // namespace qcm
