#include "deepgrading/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "deepgrading/errors.hpp"
#include "deepgrading/util.hpp"

namespace dg {

namespace {

void require_both_classes(std::span<const int> labels) {
  bool pos = false, neg = false;
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("labels must be 0 or 1");
    (y ? pos : neg) = true;
  }
  if (!pos || !neg) throw DataError("metric needs both classes present");
}

/// Average (1-based) ranks of values, ties share the mean rank.
std::vector<double> average_ranks(std::span<const double> v, std::vector<std::size_t>* tie_sizes = nullptr) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    if (tie_sizes) tie_sizes->push_back(j - i + 1);
    i = j + 1;
  }
  return r;
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

double bacc(std::span<const int> labels, std::span<const int> predictions) {
  if (labels.size() != predictions.size()) throw DataError("labels and predictions differ in length");
  require_both_classes(labels);
  std::size_t tp = 0, tn = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) {
      ++pos;
      tp += predictions[i] == 1;
    } else {
      ++neg;
      tn += predictions[i] == 0;
    }
  }
  return 0.5 * (static_cast<double>(tp) / static_cast<double>(pos) + static_cast<double>(tn) / static_cast<double>(neg));
}

double auc(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw DataError("labels and scores differ in length");
  require_both_classes(labels);
  const std::vector<double> r = average_ranks(scores);
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i]) {
      rank_sum += r[i];
      ++pos;
    }
  const std::size_t neg = labels.size() - pos;
  const double u = rank_sum - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1);
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

KMeansResult kmeans2(const Eigen::MatrixXd& points, std::uint64_t seed, int restarts) {
  const Eigen::Index n = points.rows();
  if (n < 4) throw DataError("2-means needs at least 4 points");
  Rng rng(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  for (int r = 0; r < std::max(1, restarts); ++r) {
    Eigen::MatrixXd c(2, points.cols());
    const Eigen::Index a = pick(rng);
    Eigen::Index b = pick(rng);
    for (int tries = 0; tries < 100 && (points.row(a) - points.row(b)).squaredNorm() == 0.0; ++tries) b = pick(rng);
    c.row(0) = points.row(a);
    c.row(1) = points.row(b);
    std::vector<int> assign(static_cast<std::size_t>(n), -1);
    for (int iter = 0; iter < 300; ++iter) {
      bool changed = false;
      for (Eigen::Index i = 0; i < n; ++i) {
        const int k = (points.row(i) - c.row(1)).squaredNorm() < (points.row(i) - c.row(0)).squaredNorm() ? 1 : 0;
        if (assign[static_cast<std::size_t>(i)] != k) {
          assign[static_cast<std::size_t>(i)] = k;
          changed = true;
        }
      }
      Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(2, points.cols());
      int cnt[2] = {0, 0};
      for (Eigen::Index i = 0; i < n; ++i) {
        sum.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
        ++cnt[assign[static_cast<std::size_t>(i)]];
      }
      for (int k = 0; k < 2; ++k) {
        if (cnt[k] == 0) {
          // empty cluster: take the point farthest from the other center
          Eigen::Index far = 0;
          double dmax = -1.0;
          for (Eigen::Index i = 0; i < n; ++i) {
            const double d = (points.row(i) - c.row(1 - k)).squaredNorm();
            if (d > dmax) {
              dmax = d;
              far = i;
            }
          }
          c.row(k) = points.row(far);
          changed = true;
        } else {
          c.row(k) = sum.row(k) / cnt[k];
        }
      }
      if (!changed) break;
    }
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) inertia += (points.row(i) - c.row(assign[static_cast<std::size_t>(i)])).squaredNorm();
    if (inertia < best.inertia) {
      best.inertia = inertia;
      best.assignment = assign;
      best.centers = c;
    }
  }
  return best;
}

double silhouette(const Eigen::MatrixXd& points, std::span<const int> assignment) {
  const Eigen::Index n = points.rows();
  if (n < 4) throw DataError("silhouette needs at least 4 points");
  if (static_cast<Eigen::Index>(assignment.size()) != n) throw DataError("assignment length differs from point count");
  int clusters = 0;
  for (int a : assignment) {
    if (a < 0) throw DataError("negative cluster id");
    clusters = std::max(clusters, a + 1);
  }
  std::vector<int> size(static_cast<std::size_t>(clusters), 0);
  for (int a : assignment) ++size[static_cast<std::size_t>(a)];
  int nonempty = 0;
  for (int s : size) nonempty += s > 0;
  if (nonempty < 2) throw DataError("silhouette needs at least two clusters");

  double total = 0.0;
  std::vector<double> dsum(static_cast<std::size_t>(clusters));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::fill(dsum.begin(), dsum.end(), 0.0);
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) dsum[static_cast<std::size_t>(assignment[static_cast<std::size_t>(j)])] += (points.row(i) - points.row(j)).norm();
    const int own = assignment[static_cast<std::size_t>(i)];
    if (size[static_cast<std::size_t>(own)] <= 1) continue;  // singleton contributes 0
    const double a = dsum[static_cast<std::size_t>(own)] / (size[static_cast<std::size_t>(own)] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int k = 0; k < clusters; ++k)
      if (k != own && size[static_cast<std::size_t>(k)] > 0) b = std::min(b, dsum[static_cast<std::size_t>(k)] / size[static_cast<std::size_t>(k)]);
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

double wilcoxon_one_sided(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("paired samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] - y[i] != 0.0) d.push_back(x[i] - y[i]);
  if (d.empty()) throw DataError("Wilcoxon test undefined: all paired differences are zero");
  std::vector<double> mag(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) mag[i] = std::abs(d[i]);
  std::vector<std::size_t> ties;
  const std::vector<double> ranks = average_ranks(mag, &ties);
  const std::size_t n = d.size();

  if (n <= 12) {
    // Doubled ranks are integers; count sign patterns by subset-sum DP.
    std::vector<int> r2(n);
    int total = 0;
    int observed = 0;
    for (std::size_t i = 0; i < n; ++i) {
      r2[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
      total += r2[i];
      if (d[i] > 0) observed += r2[i];
    }
    std::vector<double> ways(static_cast<std::size_t>(total) + 1, 0.0);
    ways[0] = 1.0;
    for (int r : r2)
      for (int w = total; w >= r; --w) ways[static_cast<std::size_t>(w)] += ways[static_cast<std::size_t>(w - r)];
    double ge = 0.0;
    for (int w = observed; w <= total; ++w) ge += ways[static_cast<std::size_t>(w)];
    return ge / std::ldexp(1.0, static_cast<int>(n));
  }

  double w_plus = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) w_plus += ranks[i];
  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1) / 4.0;
  double var = nn * (nn + 1) * (2 * nn + 1) / 24.0;
  for (std::size_t t : ties) var -= (std::pow(double(t), 3) - double(t)) / 48.0;
  if (var <= 0.0) return w_plus > mean ? 0.0 : 1.0;
  const double z = (w_plus - mean - 0.5) / std::sqrt(var);
  return normal_sf(z);
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw DataError("cosine similarity needs equal lengths");
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw DataError("cosine similarity of a zero vector");
  // sqrt(uu * uu) == uu exactly, so a vector against itself gives exactly 1.
  return uv / std::sqrt(uu * vv);
}

double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double consistency_median(std::span<const std::vector<double>> a, std::span<const std::vector<double>> b) {
  if (a.size() != b.size() || a.empty()) throw DataError("consistency study needs paired, nonempty vector sets");
  std::vector<double> sims;
  for (std::size_t i = 0; i < a.size(); ++i) sims.push_back(cosine_similarity(a[i], b[i]));
  return median(std::move(sims));
}

double welch_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw DataError("Welch t-test needs at least 2 values per group");
  auto stats = [](std::span<const double> x, double& m, double& var) {
    m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    var = 0.0;
    for (double v : x) var += (v - m) * (v - m);
    var /= static_cast<double>(x.size() - 1);
  };
  double ma, va, mb, vb;
  stats(a, ma, va);
  stats(b, mb, vb);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double se2 = va / na + vb / nb;
  if (se2 == 0.0) return ma == mb ? 1.0 : 0.0;
  const double t = (ma - mb) / std::sqrt(se2);
  const double df = se2 * se2 / ((va / na) * (va / na) / (na - 1) + (vb / nb) * (vb / nb) / (nb - 1));
  const boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

Volume3D group_average_map(std::span<const Volume3D> maps) {
  if (maps.empty()) throw DataError("group average of an empty group");
  std::vector<double> acc(maps.front().size(), 0.0);
  for (const auto& m : maps) {
    if (!(m.dims() == maps.front().dims())) throw DataError("maps differ in dims");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m[i];
  }
  Volume3D out(maps.front().dims(), maps.front().spacing());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / static_cast<double>(maps.size()));
  return out;
}

std::vector<int> top_structures(std::span<const std::vector<double>> dg, int k) {
  if (dg.empty()) throw DataError("top structures of an empty group");
  const std::size_t s = dg.front().size();
  std::vector<double> score(s, 0.0);
  for (const auto& v : dg) {
    if (v.size() != s) throw DataError("DG vectors differ in length");
    for (std::size_t i = 0; i < s; ++i) score[i] += std::abs(v[i]);
  }
  for (double& x : score) x /= static_cast<double>(dg.size());
  std::vector<int> ids(s);
  std::iota(ids.begin(), ids.end(), 1);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    return score[static_cast<std::size_t>(a - 1)] > score[static_cast<std::size_t>(b - 1)];
  });
  ids.resize(std::min<std::size_t>(s, static_cast<std::size_t>(std::max(k, 0))));
  return ids;
}

AdjacencyAnalysis adjacency_group_analysis(std::span<const Eigen::MatrixXd> adjacency, std::span<const int> labels,
                                           int top_k) {
  if (adjacency.size() != labels.size()) throw DataError("adjacency and label counts differ");
  if (adjacency.empty()) throw DataError("no adjacency matrices");
  const Eigen::Index s = adjacency.front().rows();
  AdjacencyAnalysis r;
  r.mean_negative = Eigen::MatrixXd::Zero(s, s);
  r.mean_positive = Eigen::MatrixXd::Zero(s, s);
  int npos = 0, nneg = 0;
  for (std::size_t i = 0; i < adjacency.size(); ++i) {
    if (adjacency[i].rows() != s || adjacency[i].cols() != s) throw DataError("adjacency sizes differ");
    if (labels[i]) {
      r.mean_positive += adjacency[i];
      ++npos;
    } else {
      r.mean_negative += adjacency[i];
      ++nneg;
    }
  }
  if (npos == 0 || nneg == 0) throw DataError("adjacency analysis needs both classes");
  r.mean_positive /= npos;
  r.mean_negative /= nneg;
  r.difference = (r.mean_positive - r.mean_negative).cwiseAbs();
  std::vector<StructurePair> pairs;
  for (Eigen::Index a = 0; a < s; ++a)
    for (Eigen::Index b = a + 1; b < s; ++b)
      pairs.push_back({static_cast<int>(a + 1), static_cast<int>(b + 1), r.difference(a, b)});
  std::stable_sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) { return x.difference > y.difference; });
  if (static_cast<int>(pairs.size()) > top_k) pairs.resize(static_cast<std::size_t>(std::max(top_k, 0)));
  r.top_pairs = std::move(pairs);
  return r;
}

Eigen::MatrixXd normalize_unit_range(const Eigen::MatrixXd& m) {
  const double lo = m.minCoeff(), hi = m.maxCoeff();
  if (hi <= lo) return Eigen::MatrixXd::Zero(m.rows(), m.cols());
  return (m.array() - lo) / (hi - lo);
}

}  // namespace dg
