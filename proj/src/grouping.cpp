#include "mbsl/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "mbsl/errors.hpp"
#include "mbsl/rng.hpp"

namespace mbsl {

namespace {

// One embedding point: a z-scored single-channel window trace.
struct PointSet {
    std::vector<std::vector<double>> points;
    std::vector<int> modality_of;
};

PointSet collect_points(const MultiModalDataset& dataset, int sample_cap) {
    if (sample_cap < 10) throw ParameterError("embed_modalities: sample_cap must be >= 10");
    if (dataset.n_windows < 2) throw ParameterError("embed_modalities: need at least 2 windows");

    PointSet ps;
    const int len = dataset.window_len;
    for (int m = 0; m < dataset.n_modalities(); ++m) {
        const int channels = dataset.modalities[static_cast<std::size_t>(m)].channels;
        const int take = std::min(dataset.n_windows, sample_cap);
        for (int j = 0; j < take; ++j) {
            const int w = static_cast<int>(static_cast<std::int64_t>(j) * dataset.n_windows / take);
            Tensor win = dataset.window(m, w);
            for (int c = 0; c < channels; ++c) {
                std::vector<double> p(static_cast<std::size_t>(len));
                double mean = 0.0;
                for (int t = 0; t < len; ++t) {
                    p[static_cast<std::size_t>(t)] = win.data()[static_cast<std::size_t>(c) * len + t];
                    mean += p[static_cast<std::size_t>(t)];
                }
                mean /= len;
                double var = 0.0;
                for (double& v : p) {
                    v -= mean;
                    var += v * v;
                }
                const double sd = std::sqrt(var / len);
                if (sd < 1e-12) {
                    throw DegenerateInputError(
                        "embed_modalities: constant window in modality '" +
                        dataset.modalities[static_cast<std::size_t>(m)].name + "'");
                }
                for (double& v : p) v /= sd;
                ps.points.push_back(std::move(p));
                ps.modality_of.push_back(m);
            }
        }
    }
    return ps;
}

void center_columns(std::vector<std::vector<double>>& x) {
    if (x.empty()) return;
    const std::size_t dims = x[0].size();
    std::vector<double> mean(dims, 0.0);
    for (const auto& row : x) {
        for (std::size_t d = 0; d < dims; ++d) mean[d] += row[d];
    }
    for (double& v : mean) v /= static_cast<double>(x.size());
    for (auto& row : x) {
        for (std::size_t d = 0; d < dims; ++d) row[d] -= mean[d];
    }
}

// Top-2 principal directions via power iteration with deflation; the data is
// applied implicitly so the D x D covariance is never formed.
std::vector<std::array<double, 2>> pca2(std::vector<std::vector<double>> x, std::uint64_t seed) {
    center_columns(x);
    const std::size_t n = x.size();
    const std::size_t dims = x[0].size();
    Rng rng = Rng(seed).fork(0x9ca);
    std::vector<std::vector<double>> components;

    auto apply_cov = [&](const std::vector<double>& v) {
        std::vector<double> xv(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t d = 0; d < dims; ++d) s += x[i][d] * v[d];
            xv[i] = s;
        }
        std::vector<double> out(dims, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double w = xv[i];
            for (std::size_t d = 0; d < dims; ++d) out[d] += w * x[i][d];
        }
        return out;
    };

    for (int comp = 0; comp < 2; ++comp) {
        std::vector<double> v(dims);
        for (double& e : v) e = rng.uniform(-1.0, 1.0);
        for (int iter = 0; iter < 300; ++iter) {
            std::vector<double> next = apply_cov(v);
            for (const auto& prev : components) {
                double dot = 0.0;
                for (std::size_t d = 0; d < dims; ++d) dot += next[d] * prev[d];
                for (std::size_t d = 0; d < dims; ++d) next[d] -= dot * prev[d];
            }
            double norm = 0.0;
            for (double e : next) norm += e * e;
            norm = std::sqrt(norm);
            if (norm < 1e-300) break;  // no variance left; keep previous v
            double delta = 0.0;
            for (std::size_t d = 0; d < dims; ++d) {
                next[d] /= norm;
                delta += (next[d] - v[d]) * (next[d] - v[d]);
            }
            v.swap(next);
            if (delta < 1e-26 && iter > 10) break;
        }
        components.push_back(std::move(v));
    }

    std::vector<std::array<double, 2>> coords(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (int comp = 0; comp < 2; ++comp) {
            double s = 0.0;
            for (std::size_t d = 0; d < dims; ++d) s += x[i][d] * components[static_cast<std::size_t>(comp)][d];
            coords[i][static_cast<std::size_t>(comp)] = s;
        }
    }
    return coords;
}

// Exact t-SNE (no tree approximation); desk-scale point counts only.
std::vector<std::array<double, 2>> tsne2(const std::vector<std::vector<double>>& x,
                                         std::uint64_t seed) {
    const std::size_t n = x.size();
    const std::size_t dims = x[0].size();

    std::vector<double> d2(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t d = 0; d < dims; ++d) {
                const double diff = x[i][d] - x[j][d];
                s += diff * diff;
            }
            d2[i * n + j] = s;
            d2[j * n + i] = s;
        }
    }

    const double perplexity = std::min(30.0, (static_cast<double>(n) - 1.0) / 3.0);
    const double target_entropy = std::log(perplexity);

    // conditional affinities with per-point bandwidth found by bisection
    std::vector<double> p(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double beta = 1.0, beta_lo = 0.0, beta_hi = std::numeric_limits<double>::infinity();
        for (int iter = 0; iter < 64; ++iter) {
            double sum = 0.0, weighted = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double w = std::exp(-beta * d2[i * n + j]);
                sum += w;
                weighted += w * d2[i * n + j];
            }
            if (sum <= 0.0) {
                beta /= 2.0;
                continue;
            }
            const double entropy = std::log(sum) + beta * weighted / sum;
            const double diff = entropy - target_entropy;
            if (std::fabs(diff) < 1e-7) break;
            if (diff > 0) {
                beta_lo = beta;
                beta = std::isinf(beta_hi) ? beta * 2.0 : 0.5 * (beta + beta_hi);
            } else {
                beta_hi = beta;
                beta = 0.5 * (beta + beta_lo);
            }
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) sum += std::exp(-beta * d2[i * n + j]);
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) p[i * n + j] = std::exp(-beta * d2[i * n + j]) / sum;
        }
    }

    // symmetrize, floor, exaggerate
    std::vector<double> pij(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            pij[i * n + j] = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * n), 1e-12);
        }
    }

    const int max_iter = 500;
    const int stop_exaggeration = 250;
    const double exaggeration = 12.0;
    const double eta = 200.0;

    Rng rng = Rng(seed).fork(0x75e);
    std::vector<std::array<double, 2>> y(n), velocity(n, {0.0, 0.0}), gains(n, {1.0, 1.0});
    for (auto& row : y) {
        row[0] = 1e-4 * rng.normal();
        row[1] = 1e-4 * rng.normal();
    }

    std::vector<double> q(n * n, 0.0);
    for (int iter = 0; iter < max_iter; ++iter) {
        const double exaggerate = iter < stop_exaggeration ? exaggeration : 1.0;
        const double momentum = iter < stop_exaggeration ? 0.5 : 0.8;

        double qsum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const double dy0 = y[i][0] - y[j][0];
                const double dy1 = y[i][1] - y[j][1];
                const double w = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                q[i * n + j] = w;
                q[j * n + i] = w;
                qsum += 2.0 * w;
            }
        }

        // full gradient from one snapshot of y, then a joint update
        std::vector<std::array<double, 2>> grad(n, {0.0, 0.0});
        for (std::size_t i = 0; i < n; ++i) {
            double g0 = 0.0, g1 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double w = q[i * n + j];
                const double coeff = (exaggerate * pij[i * n + j] - w / qsum) * w;
                g0 += coeff * (y[i][0] - y[j][0]);
                g1 += coeff * (y[i][1] - y[j][1]);
            }
            grad[i] = {4.0 * g0, 4.0 * g1};
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (int d = 0; d < 2; ++d) {
                const double g = grad[i][static_cast<std::size_t>(d)];
                auto& gain = gains[i][static_cast<std::size_t>(d)];
                auto& vel = velocity[i][static_cast<std::size_t>(d)];
                gain = (g > 0) == (vel > 0) ? std::max(0.01, gain * 0.8) : gain + 0.2;
                vel = momentum * vel - eta * gain * g;
                y[i][static_cast<std::size_t>(d)] += vel;
            }
        }

        double m0 = 0.0, m1 = 0.0;
        for (const auto& row : y) {
            m0 += row[0];
            m1 += row[1];
        }
        m0 /= static_cast<double>(n);
        m1 /= static_cast<double>(n);
        for (auto& row : y) {
            row[0] -= m0;
            row[1] -= m1;
        }
    }
    return y;
}

}  // namespace

// ---- string mappings ---------------------------------------------------------

EmbedMethod embed_method_from_string(const std::string& s) {
    if (s == "tsne") return EmbedMethod::tsne;
    if (s == "pca") return EmbedMethod::pca;
    throw ParameterError("grouping method: unknown value '" + s + "'");
}

std::string to_string(EmbedMethod m) { return m == EmbedMethod::tsne ? "tsne" : "pca"; }

ThresholdPolicy threshold_policy_from_string(const std::string& s) {
    if (s == "median") return ThresholdPolicy::median;
    if (s == "largest_gap") return ThresholdPolicy::largest_gap;
    if (s == "fixed") return ThresholdPolicy::fixed;
    throw ParameterError("threshold policy: unknown value '" + s + "'");
}

std::string to_string(ThresholdPolicy p) {
    switch (p) {
        case ThresholdPolicy::median: return "median";
        case ThresholdPolicy::largest_gap: return "largest_gap";
        case ThresholdPolicy::fixed: return "fixed";
    }
    throw ParameterError("unknown threshold policy");
}

GroupingVariant grouping_variant_from_string(const std::string& s) {
    if (s == "img") return GroupingVariant::img;
    if (s == "none") return GroupingVariant::none;
    if (s == "random") return GroupingVariant::random;
    if (s == "full") return GroupingVariant::full;
    throw ParameterError("grouping variant: unknown value '" + s + "'");
}

std::string to_string(GroupingVariant v) {
    switch (v) {
        case GroupingVariant::img: return "img";
        case GroupingVariant::none: return "none";
        case GroupingVariant::random: return "random";
        case GroupingVariant::full: return "full";
    }
    throw ParameterError("unknown grouping variant");
}

int GroupingResult::group_of(int modality) const {
    for (std::size_t g = 0; g < groups.size(); ++g) {
        for (int m : groups[g]) {
            if (m == modality) return static_cast<int>(g);
        }
    }
    throw ContractError("modality " + std::to_string(modality) + " not present in grouping");
}

// ---- embedding ----------------------------------------------------------------

std::vector<std::array<double, 2>> embed_modalities(const MultiModalDataset& dataset,
                                                    EmbedMethod method, std::uint64_t seed,
                                                    int sample_cap) {
    PointSet ps = collect_points(dataset, sample_cap);
    std::vector<std::array<double, 2>> coords;
    if (method == EmbedMethod::pca) {
        coords = pca2(std::move(ps.points), seed);
    } else {
        coords = tsne2(ps.points, seed);
    }

    const int m_count = dataset.n_modalities();
    std::vector<std::array<double, 2>> centroid(static_cast<std::size_t>(m_count), {0.0, 0.0});
    std::vector<int> counts(static_cast<std::size_t>(m_count), 0);
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const auto m = static_cast<std::size_t>(ps.modality_of[i]);
        centroid[m][0] += coords[i][0];
        centroid[m][1] += coords[i][1];
        counts[m] += 1;
    }
    for (int m = 0; m < m_count; ++m) {
        centroid[static_cast<std::size_t>(m)][0] /= counts[static_cast<std::size_t>(m)];
        centroid[static_cast<std::size_t>(m)][1] /= counts[static_cast<std::size_t>(m)];
    }
    return centroid;
}

std::vector<std::vector<double>> inter_modal_distances(
    const std::vector<std::array<double, 2>>& embedding) {
    const std::size_t m = embedding.size();
    if (m < 1) throw ParameterError("inter_modal_distances: empty embedding");
    std::vector<std::vector<double>> dist(m, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            const double dx = embedding[i][0] - embedding[j][0];
            const double dy = embedding[i][1] - embedding[j][1];
            const double d = std::sqrt(dx * dx + dy * dy);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    return dist;
}

double choose_threshold(const std::vector<std::vector<double>>& distance_matrix,
                        ThresholdPolicy policy, double fixed_value) {
    if (policy == ThresholdPolicy::fixed) {
        if (fixed_value <= 0.0) throw ParameterError("threshold: fixed value must be positive");
        return fixed_value;
    }
    const std::size_t m = distance_matrix.size();
    std::vector<double> off;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) off.push_back(distance_matrix[i][j]);
    }
    if (off.empty()) return 1.0;  // single modality; any positive value works
    std::sort(off.begin(), off.end());

    if (policy == ThresholdPolicy::median) {
        const std::size_t h = off.size() / 2;
        return off.size() % 2 == 1 ? off[h] : 0.5 * (off[h - 1] + off[h]);
    }
    // largest_gap: midpoint of the widest gap between consecutive distances
    if (off.size() == 1) return off[0];
    std::size_t best = 1;
    double best_gap = -1.0;
    for (std::size_t i = 1; i < off.size(); ++i) {
        const double gap = off[i] - off[i - 1];
        if (gap > best_gap) {
            best_gap = gap;
            best = i;
        }
    }
    return 0.5 * (off[best - 1] + off[best]);
}

// ---- threshold grouping --------------------------------------------------------

GroupingResult group_by_threshold(const std::vector<std::vector<double>>& distance_matrix,
                                  double threshold) {
    if (threshold <= 0.0) throw ParameterError("group_by_threshold: threshold must be positive");
    const std::size_t m = distance_matrix.size();
    if (m == 0) throw ParameterError("group_by_threshold: empty distance matrix");
    double max_abs = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (distance_matrix[i].size() != m) {
            throw ContractError("group_by_threshold: distance matrix is not square");
        }
        for (std::size_t j = 0; j < m; ++j) max_abs = std::max(max_abs, std::fabs(distance_matrix[i][j]));
    }
    const double tol = 1e-9 * (1.0 + max_abs);
    for (std::size_t i = 0; i < m; ++i) {
        if (std::fabs(distance_matrix[i][i]) > tol) {
            throw ContractError("group_by_threshold: non-zero diagonal");
        }
        for (std::size_t j = 0; j < m; ++j) {
            if (distance_matrix[i][j] < -tol) {
                throw ContractError("group_by_threshold: negative distance");
            }
            if (std::fabs(distance_matrix[i][j] - distance_matrix[j][i]) > tol) {
                throw ContractError("group_by_threshold: matrix is not symmetric");
            }
        }
    }

    // union-find over d < threshold edges
    std::vector<int> parent(m);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int a) {
        while (parent[static_cast<std::size_t>(a)] != a) {
            parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
            a = parent[static_cast<std::size_t>(a)];
        }
        return a;
    };
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            if (distance_matrix[i][j] < threshold) {
                parent[static_cast<std::size_t>(find(static_cast<int>(j)))] = find(static_cast<int>(i));
            }
        }
    }

    std::vector<std::vector<int>> buckets(m);
    for (std::size_t i = 0; i < m; ++i) {
        buckets[static_cast<std::size_t>(find(static_cast<int>(i)))].push_back(static_cast<int>(i));
    }
    GroupingResult result;
    for (auto& b : buckets) {
        if (!b.empty()) result.groups.push_back(std::move(b));  // ascending by construction
    }
    std::sort(result.groups.begin(), result.groups.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
    result.distance_matrix = distance_matrix;
    result.threshold = threshold;
    return result;
}

void validate(const GroupingResult& result) {
    const std::size_t m = result.distance_matrix.size();
    std::vector<int> seen(m, 0);
    for (const auto& group : result.groups) {
        if (group.empty()) throw ContractError("grouping: empty group");
        for (int idx : group) {
            if (idx < 0 || static_cast<std::size_t>(idx) >= m) {
                throw ContractError("grouping: modality index out of range");
            }
            seen[static_cast<std::size_t>(idx)] += 1;
        }
    }
    for (std::size_t i = 0; i < m; ++i) {
        if (seen[i] != 1) {
            throw ContractError("grouping: modality " + std::to_string(i) +
                                " appears " + std::to_string(seen[i]) + " times");
        }
    }
    for (const auto& group : result.groups) {
        if (group.size() < 2) continue;
        for (int a : group) {
            bool has_close_neighbor = false;
            for (int b : group) {
                if (a != b &&
                    result.distance_matrix[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] <
                        result.threshold) {
                    has_close_neighbor = true;
                    break;
                }
            }
            if (!has_close_neighbor) {
                throw ContractError("grouping: member " + std::to_string(a) +
                                    " has no within-group neighbor under the threshold");
            }
        }
    }
    for (std::size_t g1 = 0; g1 < result.groups.size(); ++g1) {
        for (std::size_t g2 = g1 + 1; g2 < result.groups.size(); ++g2) {
            for (int a : result.groups[g1]) {
                for (int b : result.groups[g2]) {
                    if (result.distance_matrix[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] <
                        result.threshold) {
                        throw ContractError("grouping: cross-group distance below threshold");
                    }
                }
            }
        }
    }
}

// ---- variants -------------------------------------------------------------------

GroupingResult grouping_variant_from(const std::vector<std::vector<double>>& distance_matrix,
                                     const std::vector<std::array<double, 2>>& embedding,
                                     GroupingVariant variant, const GroupingOptions& options) {
    const int m = static_cast<int>(distance_matrix.size());
    GroupingResult img = group_by_threshold(
        distance_matrix, choose_threshold(distance_matrix, options.policy, options.fixed_threshold));
    img.embedding = embedding;

    switch (variant) {
        case GroupingVariant::img:
            return img;
        case GroupingVariant::none: {
            GroupingResult r;
            r.groups.emplace_back();
            for (int i = 0; i < m; ++i) r.groups[0].push_back(i);
            r.distance_matrix = distance_matrix;
            r.embedding = embedding;
            r.threshold = std::numeric_limits<double>::infinity();
            return r;
        }
        case GroupingVariant::full: {
            GroupingResult r;
            for (int i = 0; i < m; ++i) r.groups.push_back({i});
            r.distance_matrix = distance_matrix;
            r.embedding = embedding;
            r.threshold = img.threshold;
            return r;
        }
        case GroupingVariant::random: {
            // uniform partition with the same K the threshold rule found
            const int k = img.num_groups();
            Rng rng = Rng(options.seed).fork(0x9a9d);
            std::vector<std::vector<int>> groups;
            for (int attempt = 0; attempt < 10000; ++attempt) {
                groups.assign(static_cast<std::size_t>(k), {});
                for (int i = 0; i < m; ++i) {
                    groups[static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(k)))]
                        .push_back(i);
                }
                bool ok = true;
                for (const auto& g : groups) ok = ok && !g.empty();
                if (ok) break;
                groups.clear();
            }
            if (groups.empty()) throw ContractError("random grouping: failed to draw a partition");
            GroupingResult r;
            r.groups = std::move(groups);
            std::sort(r.groups.begin(), r.groups.end(),
                      [](const auto& a, const auto& b) { return a.front() < b.front(); });
            r.distance_matrix = distance_matrix;
            r.embedding = embedding;
            r.threshold = img.threshold;
            return r;
        }
    }
    throw ParameterError("unknown grouping variant");
}

GroupingResult grouping_variant(const MultiModalDataset& dataset, GroupingVariant variant,
                                const GroupingOptions& options) {
    auto embedding = embed_modalities(dataset, options.method, options.seed, options.sample_cap);
    auto distances = inter_modal_distances(embedding);
    return grouping_variant_from(distances, embedding, variant, options);
}

std::string grouping_to_json(const GroupingResult& result) {
    nlohmann::json j;
    j["groups"] = result.groups;
    j["distance_matrix"] = result.distance_matrix;
    nlohmann::json coords = nlohmann::json::array();
    for (const auto& c : result.embedding) coords.push_back({c[0], c[1]});
    j["embedding"] = coords;
    j["threshold"] = result.threshold;
    return j.dump(2);
}

}  // namespace mbsl
