#pragma once

// Exact k-nearest-neighbour graph over a point cloud, backed by a static
// kd-tree. Neighbours are ordered by (squared distance, index), so the result
// is fully deterministic under ties.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

#include "sipf/error.hpp"
#include "sipf/geometry.hpp"

namespace sipf {

class NeighborGraph {
 public:
  NeighborGraph(std::size_t k, std::vector<std::size_t> flat) : k_(k), idx_(std::move(flat)) {}

  std::size_t k() const noexcept { return k_; }
  std::size_t size() const noexcept { return k_ == 0 ? 0 : idx_.size() / k_; }
  std::size_t operator()(std::size_t i, std::size_t j) const { return idx_[i * k_ + j]; }

  /// Row i: indices of the k nearest neighbours of point i.
  std::vector<std::size_t> row(std::size_t i) const {
    return {idx_.begin() + static_cast<std::ptrdiff_t>(i * k_),
            idx_.begin() + static_cast<std::ptrdiff_t>((i + 1) * k_)};
  }

  friend bool operator==(const NeighborGraph&, const NeighborGraph&) = default;

 private:
  std::size_t k_;
  std::vector<std::size_t> idx_;
};

namespace detail {

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

struct Candidate {
  double d2;
  std::size_t index;
  bool operator<(const Candidate& o) const {
    return d2 < o.d2 || (d2 == o.d2 && index < o.index);
  }
};

class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& pts) : pts_(pts), order_(pts.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * pts.size() / kLeaf + 2);
    build(0, order_.size());
  }

  /// k nearest to `pts[query]`, excluding the query itself.
  std::vector<Candidate> query(std::size_t query, std::size_t k) const {
    std::vector<Candidate> heap;
    heap.reserve(k + 1);
    search(0, query, k, heap);
    std::sort_heap(heap.begin(), heap.end());
    return heap;
  }

 private:
  static constexpr std::size_t kLeaf = 12;

  struct Node {
    std::size_t begin, end;
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    std::size_t left = 0, right = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeaf) return id;

    Vec3 lo = pts_[order_[begin]], hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(pts_[order_[i]]);
      hi = hi.cwiseMax(pts_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) { return pts_[a][axis] < pts_[b][axis]; });
    const double split = pts_[order_[mid]][axis];
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void offer(const Candidate& c, std::size_t k, std::vector<Candidate>& heap) const {
    if (heap.size() < k) {
      heap.push_back(c);
      std::push_heap(heap.begin(), heap.end());
    } else if (c < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = c;
      std::push_heap(heap.begin(), heap.end());
    }
  }

  void search(std::size_t node_id, std::size_t q, std::size_t k,
              std::vector<Candidate>& heap) const {
    const Node& node = nodes_[node_id];
    const Vec3& p = pts_[q];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        if (idx == q) continue;
        offer({squared_distance(p, pts_[idx]), idx}, k, heap);
      }
      return;
    }
    const double delta = p[node.axis] - node.split;
    const std::size_t near = delta < 0.0 ? node.left : node.right;
    const std::size_t far = delta < 0.0 ? node.right : node.left;
    search(near, q, k, heap);
    // Equal distances must still be visited so the index tie-break stays exact.
    if (heap.size() < k || delta * delta <= heap.front().d2) search(far, q, k, heap);
  }

  const std::vector<Vec3>& pts_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace detail

inline NeighborGraph knn_graph(const PointCloud& cloud, std::size_t k) {
  const std::size_t n = cloud.size();
  if (k < 1 || k + 1 > n)
    throw Error(ErrorKind::invalid_argument,
                "k must lie in [1, N-1], got k=" + std::to_string(k) + " for N=" + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i)
    if (!cloud.point(i).allFinite()) throw Error(ErrorKind::invalid_input, "non-finite coordinate", i);

  detail::KdTree tree(cloud.points());
  std::vector<std::size_t> flat;
  flat.reserve(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& c : tree.query(i, k)) flat.push_back(c.index);
  return NeighborGraph(k, std::move(flat));
}

}  // namespace sipf
