// k-nearest-neighbor mutual information estimation on paired scalar samples.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "ndf/correlation.hpp"
#include "ndf/error.hpp"

namespace ndf {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Deterministic offset in [-0.5, 0.5) for sample i.
double unit_jitter(std::size_t i) {
    return static_cast<double>(splitmix64(i) >> 11) * 0x1.0p-53 - 0.5;
}

std::vector<double> jittered(std::span<const double> v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    double range = *hi - *lo;
    if (!(range > 0.0)) range = std::max(1.0, std::abs(*lo));
    const double magnitude = 1e-10 * range;
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] + magnitude * unit_jitter(i);
    return out;
}

/// Static 2D kd-tree answering k-nearest-neighbor distance queries in the
/// max-norm.
class KdTree2 {
public:
    KdTree2(const std::vector<double>& xs, const std::vector<double>& ys) : x_(xs), y_(ys) {
        order_.resize(xs.size());
        std::iota(order_.begin(), order_.end(), 0u);
        nodes_.reserve(2 * xs.size() / kLeafSize + 2);
        build(0, static_cast<std::uint32_t>(order_.size()));
    }

    /// Distance to the k-th nearest other point of sample `self`.
    double kth_distance(std::uint32_t self, int k) const {
        Best best(k);
        search(0, x_[self], y_[self], self, best);
        return best.worst();
    }

private:
    static constexpr std::uint32_t kLeafSize = 8;

    struct Node {
        std::uint32_t begin, end;
        std::int32_t left = -1, right = -1;
        int axis = 0;
        double split = 0.0;
    };

    /// The k smallest distances seen so far, kept sorted ascending.
    struct Best {
        explicit Best(int k) : dist(static_cast<std::size_t>(k),
                                    std::numeric_limits<double>::infinity()) {}
        double worst() const { return dist.back(); }
        void offer(double d) {
            if (d >= dist.back()) return;
            auto pos = std::upper_bound(dist.begin(), dist.end(), d);
            std::move_backward(pos, dist.end() - 1, dist.end());
            *pos = d;
        }
        std::vector<double> dist;
    };

    std::int32_t build(std::uint32_t begin, std::uint32_t end) {
        const auto id = static_cast<std::int32_t>(nodes_.size());
        nodes_.push_back(Node{begin, end});
        if (end - begin <= kLeafSize) return id;

        double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
        double ymin = xmin, ymax = -xmin;
        for (std::uint32_t i = begin; i < end; ++i) {
            const auto p = order_[i];
            xmin = std::min(xmin, x_[p]);
            xmax = std::max(xmax, x_[p]);
            ymin = std::min(ymin, y_[p]);
            ymax = std::max(ymax, y_[p]);
        }
        const int axis = (xmax - xmin) >= (ymax - ymin) ? 0 : 1;
        const auto& coord = axis == 0 ? x_ : y_;
        const std::uint32_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](std::uint32_t a, std::uint32_t b) { return coord[a] < coord[b]; });
        const double split = coord[order_[mid]];
        const auto left = build(begin, mid);
        const auto right = build(mid, end);
        Node& node = nodes_[static_cast<std::size_t>(id)];
        node.axis = axis;
        node.split = split;
        node.left = left;
        node.right = right;
        return id;
    }

    void search(std::int32_t id, double qx, double qy, std::uint32_t self, Best& best) const {
        const Node& node = nodes_[static_cast<std::size_t>(id)];
        if (node.left < 0) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) {
                const auto p = order_[i];
                if (p == self) continue;
                best.offer(std::max(std::abs(x_[p] - qx), std::abs(y_[p] - qy)));
            }
            return;
        }
        // Left subtree holds coordinates <= split, right subtree >= split.
        const double q = node.axis == 0 ? qx : qy;
        const double gap = q - node.split;
        const bool go_left = gap < 0.0;
        search(go_left ? node.left : node.right, qx, qy, self, best);
        if (std::abs(gap) <= best.worst()) {
            search(go_left ? node.right : node.left, qx, qy, self, best);
        }
    }

    const std::vector<double>& x_;
    const std::vector<double>& y_;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
};

/// Number of sorted values strictly closer than eps to v (v itself included).
std::size_t count_within(const std::vector<double>& sorted, double v, double eps) {
    const auto pos = std::lower_bound(sorted.begin(), sorted.end(), v);
    const auto below = std::partition_point(sorted.begin(), pos,
                                            [&](double s) { return !(v - s < eps); });
    const auto above = std::partition_point(pos, sorted.end(),
                                            [&](double s) { return s - v < eps; });
    return static_cast<std::size_t>(above - below);
}

} // namespace

double ksg_mi(std::span<const double> a, std::span<const double> b, int k) {
    if (a.size() != b.size()) throw ShapeError("ksg_mi: sample vectors differ in length");
    if (k < 1) throw ParameterError("ksg_mi: k must be >= 1");
    const std::size_t n = a.size();
    if (n <= static_cast<std::size_t>(k)) {
        throw ParameterError("ksg_mi: need more samples than neighbors (N > k)");
    }

    const std::vector<double> x = jittered(a);
    const std::vector<double> y = jittered(b);
    std::vector<double> xs = x, ys = y;
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());

    std::vector<double> psi(n + 1);
    for (std::size_t i = 1; i <= n; ++i) psi[i] = digamma(static_cast<double>(i));

    const KdTree2 tree(x, y);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double eps = tree.kth_distance(static_cast<std::uint32_t>(i), k);
        // Neighbors strictly inside eps, excluding the sample itself.
        const std::size_t nx = std::max<std::size_t>(count_within(xs, x[i], eps), 1) - 1;
        const std::size_t ny = std::max<std::size_t>(count_within(ys, y[i], eps), 1) - 1;
        sum += psi[nx + 1] + psi[ny + 1];
    }
    return psi[static_cast<std::size_t>(k)] + psi[n] - sum / static_cast<double>(n);
}

} // namespace ndf
