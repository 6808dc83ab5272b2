#include "needlekit/cluster.hpp"

#include "needlekit/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace needlekit {

namespace {

// ---------------------------------------------------------------- k-means

double kmeans_run(const Eigen::MatrixXd& x, int k, std::mt19937_64& rng,
                  std::vector<int>& labels) {
    const int n = static_cast<int>(x.rows());
    Eigen::MatrixXd centers(k, x.cols());

    // k-means++ seeding
    std::uniform_int_distribution<int> pick(0, n - 1);
    centers.row(0) = x.row(pick(rng));
    Eigen::VectorXd d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        double total = d2.sum();
        int chosen = 0;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double r = u(rng), acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) { chosen = i; break; }
            }
        } else {
            chosen = pick(rng);
        }
        centers.row(c) = x.row(chosen);
        d2 = d2.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
    }

    labels.assign(n, 0);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bd = (x.row(i) - centers.row(0)).squaredNorm();
            for (int c = 1; c < k; ++c) {
                double d = (x.row(i) - centers.row(c)).squaredNorm();
                if (d < bd) { bd = d; best = c; }
            }
            if (labels[i] != best) { labels[i] = best; changed = true; }
        }
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
        std::vector<int> counts(k, 0);
        for (int i = 0; i < n; ++i) {
            sums.row(labels[i]) += x.row(i);
            ++counts[labels[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                centers.row(c) = sums.row(c) / counts[c];
            } else {
                // repair: steal the point farthest from its centroid
                int far_i = 0;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    double d = (x.row(i) - centers.row(labels[i])).squaredNorm();
                    if (d > far_d) { far_d = d; far_i = i; }
                }
                centers.row(c) = x.row(far_i);
                labels[far_i] = c;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;
    }
    double inertia = 0.0;
    for (int i = 0; i < n; ++i)
        inertia += (x.row(i) - centers.row(labels[i])).squaredNorm();
    return inertia;
}

// ------------------------------------------------------------- union-find

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

std::vector<int> spectral_cluster(const std::vector<Eigen::Vector2d>& points,
                                  int k, unsigned seed) {
    const int n = static_cast<int>(points.size());
    if (k < 1) throw std::invalid_argument("spectral_cluster: k must be >= 1");
    if (n < k) throw std::invalid_argument("spectral_cluster: fewer points than k");
    if (k == 1) return std::vector<int>(n, 0);

    Eigen::MatrixXd dist(n, n);
    for (int i = 0; i < n; ++i) {
        dist(i, i) = 0.0;
        for (int j = i + 1; j < n; ++j) {
            double d = (points[i] - points[j]).norm();
            dist(i, j) = dist(j, i) = d;
        }
    }
    // sigma at the local (nearest-neighbor) scale: a global median pairwise
    // distance flattens the affinity gap between dense groups far apart,
    // which defeats the embedding when many small groups share one slice
    std::vector<double> nn(n, std::numeric_limits<double>::infinity());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (j != i) nn[i] = std::min(nn[i], dist(i, j));
    std::sort(nn.begin(), nn.end());
    double sigma = (n % 2 == 1) ? nn[n / 2] : 0.5 * (nn[n / 2 - 1] + nn[n / 2]);
    if (!(sigma > 0.0) || !std::isfinite(sigma)) sigma = 1.0;

    Eigen::MatrixXd w = (-dist.array().square() / (2.0 * sigma * sigma)).exp();
    w.diagonal().setZero();
    Eigen::VectorXd deg = w.rowwise().sum().cwiseMax(1e-300);
    Eigen::VectorXd dinv = deg.array().rsqrt();
    Eigen::MatrixXd lsym = Eigen::MatrixXd::Identity(n, n) -
                           dinv.asDiagonal() * w * dinv.asDiagonal();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lsym);
    Eigen::MatrixXd embed = es.eigenvectors().leftCols(k);
    for (int i = 0; i < n; ++i) {
        double norm = embed.row(i).norm();
        if (norm > 0.0) embed.row(i) /= norm;
    }

    std::vector<int> best_labels, labels;
    double best_inertia = std::numeric_limits<double>::infinity();
    for (int restart = 0; restart < 10; ++restart) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(seed) * 1000003ULL + restart);
        double inertia = kmeans_run(embed, k, rng, labels);
        if (inertia < best_inertia) {
            best_inertia = inertia;
            best_labels = labels;
        }
    }
    return best_labels;
}

std::vector<int> hdbscan(const std::vector<Vec3>& points, const HdbscanParams& params) {
    if (params.min_samples < 1 || params.min_cluster_size < 1)
        throw std::invalid_argument("hdbscan: params must be >= 1");
    const int n = static_cast<int>(points.size());
    if (n == 0) throw std::invalid_argument("hdbscan: empty input");
    const int mcs = params.min_cluster_size;
    if (n == 1) return {-1};

    // core distance: distance to the min_samples-th nearest neighbor,
    // counting the point itself as the first
    std::vector<double> core(n);
    const int k_other = std::min(params.min_samples - 1, n - 1);
    std::vector<double> buf(n - 1);
    for (int i = 0; i < n; ++i) {
        int m = 0;
        for (int j = 0; j < n; ++j)
            if (j != i) buf[m++] = (points[i] - points[j]).norm();
        std::nth_element(buf.begin(), buf.begin() + std::max(0, k_other - 1), buf.end());
        core[i] = k_other == 0 ? 0.0 : buf[k_other - 1];
    }

    auto mreach = [&](int a, int b) {
        return std::max({core[a], core[b], (points[a] - points[b]).norm()});
    };

    // Prim MST over the implicit complete mutual-reachability graph
    std::vector<double> key(n, std::numeric_limits<double>::infinity());
    std::vector<int> via(n, -1);
    std::vector<bool> in_tree(n, false);
    struct Edge { int u, v; double w; };
    std::vector<Edge> edges;
    edges.reserve(n - 1);
    int cur = 0;
    in_tree[0] = true;
    for (int step = 1; step < n; ++step) {
        for (int j = 0; j < n; ++j) {
            if (in_tree[j]) continue;
            double w = mreach(cur, j);
            if (w < key[j]) { key[j] = w; via[j] = cur; }
        }
        int next = -1;
        double best = std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j)
            if (!in_tree[j] && key[j] < best) { best = key[j]; next = j; }
        edges.push_back({via[next], next, key[next]});
        in_tree[next] = true;
        cur = next;
    }
    std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
        if (a.w != b.w) return a.w < b.w;
        int amin = std::min(a.u, a.v), bmin = std::min(b.u, b.v);
        if (amin != bmin) return amin < bmin;
        return std::max(a.u, a.v) < std::max(b.u, b.v);
    });

    // single-linkage dendrogram; internal nodes n .. 2n-2
    const int total_nodes = 2 * n - 1;
    std::vector<int> left(total_nodes, -1), right(total_nodes, -1), size(total_nodes, 1);
    std::vector<double> merge_dist(total_nodes, 0.0);
    UnionFind uf(total_nodes);
    std::vector<int> rep(total_nodes);  // root representative of each uf component
    std::iota(rep.begin(), rep.end(), 0);
    int next_node = n;
    for (const auto& e : edges) {
        int ra = rep[uf.find(e.u)], rb = rep[uf.find(e.v)];
        left[next_node] = ra;
        right[next_node] = rb;
        size[next_node] = size[ra] + size[rb];
        merge_dist[next_node] = e.w;
        uf.unite(e.u, e.v);
        uf.unite(e.u, next_node);
        rep[uf.find(e.u)] = next_node;
        ++next_node;
    }
    const int root = next_node - 1;

    auto lambda_of = [](double d) { return d > 1e-12 ? 1.0 / d : 1e12; };

    // condensed tree
    struct Condensed {
        int parent = -1;
        double birth = 0.0;
        double stability = 0.0;
        std::vector<int> child_clusters;
    };
    std::vector<Condensed> cond;
    cond.push_back({-1, 0.0, 0.0, {}});
    std::vector<int> point_cluster(n, -1);
    std::vector<double> point_lambda(n, 0.0);

    auto collect_leaves = [&](int node, std::vector<int>& out) {
        std::vector<int> stack{node};
        while (!stack.empty()) {
            int u = stack.back();
            stack.pop_back();
            if (u < n) {
                out.push_back(u);
            } else {
                stack.push_back(left[u]);
                stack.push_back(right[u]);
            }
        }
    };

    struct Frame { int node; int cluster; };
    std::vector<Frame> stack{{root, 0}};
    while (!stack.empty()) {
        auto [node, cluster] = stack.back();
        stack.pop_back();
        if (node < n) {
            point_cluster[node] = cluster;
            point_lambda[node] = 1e12;  // singleton persists to infinite density
            continue;
        }
        double lam = lambda_of(merge_dist[node]);
        int c1 = left[node], c2 = right[node];
        bool big1 = size[c1] >= mcs, big2 = size[c2] >= mcs;
        if (big1 && big2) {
            for (int child : {c1, c2}) {
                int id = static_cast<int>(cond.size());
                cond.push_back({cluster, lam, 0.0, {}});
                cond[cluster].child_clusters.push_back(id);
                cond[cluster].stability += (lam - cond[cluster].birth) * size[child];
                stack.push_back({child, id});
            }
        } else if (big1 || big2) {
            int keep = big1 ? c1 : c2;
            int drop = big1 ? c2 : c1;
            std::vector<int> pts;
            collect_leaves(drop, pts);
            for (int p : pts) {
                point_cluster[p] = cluster;
                point_lambda[p] = lam;
                cond[cluster].stability += lam - cond[cluster].birth;
            }
            stack.push_back({keep, cluster});
        } else {
            std::vector<int> pts;
            collect_leaves(node, pts);
            for (int p : pts) {
                point_cluster[p] = cluster;
                point_lambda[p] = lam;
                cond[cluster].stability += lam - cond[cluster].birth;
            }
        }
    }

    // excess-of-mass selection, root excluded
    const int nc = static_cast<int>(cond.size());
    std::vector<double> subtree(nc, 0.0);
    std::vector<bool> choose(nc, false);
    for (int c = nc - 1; c >= 0; --c) {  // children always have larger ids
        if (cond[c].child_clusters.empty()) {
            choose[c] = true;
            subtree[c] = cond[c].stability;
        } else {
            double child_sum = 0.0;
            for (int ch : cond[c].child_clusters) child_sum += subtree[ch];
            if (c != 0 && cond[c].stability >= child_sum) {
                choose[c] = true;
                subtree[c] = cond[c].stability;
            } else {
                subtree[c] = child_sum;
            }
        }
    }

    // map each condensed cluster to the shallowest chosen ancestor-or-self
    std::vector<int> owner(nc, -1);
    std::vector<std::pair<int, int>> walk{{0, -1}};  // (cluster, active selection)
    while (!walk.empty()) {
        auto [c, sel] = walk.back();
        walk.pop_back();
        if (sel < 0 && c != 0 && choose[c]) sel = c;
        owner[c] = sel;
        for (int ch : cond[c].child_clusters) walk.push_back({ch, sel});
    }

    // single-cluster fallback: when nothing below the root is stable enough
    // but the input could form one cluster, keep the root as that cluster
    bool any_selected = false;
    for (int c = 0; c < nc && !any_selected; ++c) any_selected = owner[c] >= 0;
    if (!any_selected && n >= params.min_cluster_size)
        for (auto& o : owner) o = 0;

    std::vector<int> labels(n, -1);
    for (int p = 0; p < n; ++p)
        if (owner[point_cluster[p]] >= 0) labels[p] = owner[point_cluster[p]];

    // canonical relabeling by minimum point index
    std::vector<int> first(nc, -1);
    for (int p = 0; p < n; ++p) {
        int l = labels[p];
        if (l >= 0 && first[l] < 0) first[l] = p;
    }
    std::vector<int> ids;
    for (int c = 0; c < nc; ++c)
        if (first[c] >= 0) ids.push_back(c);
    std::sort(ids.begin(), ids.end(), [&](int a, int b) { return first[a] < first[b]; });
    std::vector<int> remap(nc, -1);
    for (std::size_t r = 0; r < ids.size(); ++r) remap[ids[r]] = static_cast<int>(r);
    for (auto& l : labels)
        if (l >= 0) l = remap[l];
    return labels;
}

ClusterSet hdbscan(const PointCloud& cloud, const HdbscanParams& params) {
    std::vector<Vec3> pts(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) pts[i] = cloud.voxels[i].cast<double>();
    ClusterSet set;
    set.cloud = cloud;
    set.labels = hdbscan(pts, params);
    return set;
}

PropagateResult propagate_slices(const PointCloud& cloud,
                                 const std::vector<SeedRef>& seed_refs,
                                 AxialDirection direction,
                                 double converge_dist_vox,
                                 double assign_radius_vox) {
    PropagateResult res;
    res.labels.assign(cloud.size(), -1);
    if (cloud.empty()) return res;
    if (seed_refs.empty())
        throw std::invalid_argument("propagate_slices: need at least one seed reference");

    int k_min = cloud.voxels.front().z(), k_max = k_min;
    for (const auto& v : cloud.voxels) {
        k_min = std::min(k_min, v.z());
        k_max = std::max(k_max, v.z());
    }
    std::vector<std::vector<std::size_t>> by_slice(k_max - k_min + 1);
    for (std::size_t i = 0; i < cloud.size(); ++i)
        by_slice[cloud.voxels[i].z() - k_min].push_back(i);

    const bool up = direction == AxialDirection::InferiorToSuperior;
    std::vector<Vec3> refs;          // active reference positions
    std::vector<int> ref_label;      // label id per active reference
    std::vector<bool> spawned(seed_refs.size(), false);
    int next_label = 0;

    const int n_slices = k_max - k_min + 1;
    for (int step = 0; step < n_slices; ++step) {
        int k = up ? k_min + step : k_max - step;
        for (std::size_t s = 0; s < seed_refs.size(); ++s) {
            if (spawned[s]) continue;
            bool due = up ? seed_refs[s].spawn_slice <= k : seed_refs[s].spawn_slice >= k;
            if (due) {
                refs.push_back(seed_refs[s].pos_vox);
                ref_label.push_back(next_label++);
                spawned[s] = true;
            }
        }
        if (refs.empty()) continue;

        std::vector<std::size_t> assigned_points;
        std::vector<int> assigned_ref;
        for (std::size_t idx : by_slice[k - k_min]) {
            Vec3 p = cloud.voxels[idx].cast<double>();
            int best = -1;
            double bd = std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < refs.size(); ++r) {
                double d = (p - refs[r]).norm();
                if (d < bd) { bd = d; best = static_cast<int>(r); }
            }
            if (best >= 0 && bd <= assign_radius_vox) {
                assigned_points.push_back(idx);
                assigned_ref.push_back(best);
            }
        }

        std::vector<Vec3> prev = refs;
        std::vector<Vec3> sums(refs.size(), Vec3::Zero());
        std::vector<int> counts(refs.size(), 0);
        for (std::size_t a = 0; a < assigned_points.size(); ++a) {
            sums[assigned_ref[a]] += cloud.voxels[assigned_points[a]].cast<double>();
            ++counts[assigned_ref[a]];
        }
        int slice_trail = 0;
        for (std::size_t r = 0; r < refs.size(); ++r) {
            if (counts[r] > 0) {
                refs[r] = sums[r] / counts[r];
                ++slice_trail;
            }
        }

        bool converged = false;
        for (std::size_t a = 0; a < refs.size() && !converged; ++a)
            for (std::size_t b = a + 1; b < refs.size(); ++b)
                if ((refs[a] - refs[b]).norm() < converge_dist_vox) {
                    converged = true;
                    break;
                }
        if (converged) {
            // roll back the halting slice so its points stay unassigned
            return res;
        }
        for (std::size_t a = 0; a < assigned_points.size(); ++a)
            res.labels[assigned_points[a]] = ref_label[assigned_ref[a]];
        res.trail_count += slice_trail;
    }
    return res;
}

EndpointSet detect_endpoints(const PointCloud& cloud) {
    if (cloud.empty()) throw std::invalid_argument("detect_endpoints: empty cloud");
    Mask mask = points_to_mask(cloud);

    struct Kernel { int half_y, half_x; };
    const Kernel kernels[] = {{2, 2}, {3, 3}};  // (3,5,5) and (3,7,7): slab depth 2
    const int slab = 2;

    auto slab_empty = [&](const Vec3i& v, int dir, const Kernel& kern) {
        for (int dk = 1; dk <= slab; ++dk) {
            int k = v.z() + dir * dk;
            if (k < 0 || k >= cloud.meta.dims.z()) continue;  // off-grid slab is empty
            for (int dj = -kern.half_y; dj <= kern.half_y; ++dj) {
                int j = v.y() + dj;
                if (j < 0 || j >= cloud.meta.dims.y()) continue;
                for (int di = -kern.half_x; di <= kern.half_x; ++di) {
                    int i = v.x() + di;
                    if (i < 0 || i >= cloud.meta.dims.x()) continue;
                    if (mask.at({i, j, k})) return false;
                }
            }
        }
        return true;
    };

    std::vector<Vec3i> low_cand, high_cand;
    for (const auto& v : cloud.voxels) {
        for (const auto& kern : kernels) {
            if (slab_empty(v, -1, kern)) { low_cand.push_back(v); break; }
        }
        for (const auto& kern : kernels) {
            if (slab_empty(v, +1, kern)) { high_cand.push_back(v); break; }
        }
    }

    auto reduce = [](const std::vector<Vec3i>& cand) {
        std::vector<Vec3> out;
        const int m = static_cast<int>(cand.size());
        if (m == 0) return out;
        UnionFind uf(m);
        for (int a = 0; a < m; ++a)
            for (int b = a + 1; b < m; ++b)
                if ((cand[a] - cand[b]).cast<double>().norm() <= 3.5) uf.unite(a, b);
        std::vector<std::vector<int>> groups;
        std::vector<int> group_of(m, -1);
        for (int a = 0; a < m; ++a) {
            int r = uf.find(a);
            if (group_of[r] < 0) {
                group_of[r] = static_cast<int>(groups.size());
                groups.emplace_back();
            }
            groups[group_of[r]].push_back(a);
        }
        for (const auto& g : groups) {
            Vec3 med;
            for (int axis = 0; axis < 3; ++axis) {
                std::vector<int> vals;
                vals.reserve(g.size());
                for (int a : g) vals.push_back(cand[a][axis]);
                std::sort(vals.begin(), vals.end());
                std::size_t h = vals.size() / 2;
                med[axis] = vals.size() % 2 == 1
                                ? vals[h]
                                : 0.5 * (vals[h - 1] + vals[h]);
            }
            out.push_back(med);
        }
        return out;
    };

    EndpointSet eps;
    eps.lowest = reduce(low_cand);
    eps.highest = reduce(high_cand);
    return eps;
}

}  // namespace needlekit
