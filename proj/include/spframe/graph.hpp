#pragma once

// Periodic neighbour graph. Edge (src j → dst i, image k) carries the vector
// x_i + L·k − x_j, i.e. it points from the neighbour towards the image of the
// receiving atom. Edges are grouped by dst.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <tuple>
#include <vector>

#include "crystal.hpp"
#include "error.hpp"
#include "linalg.hpp"
#include "tensor.hpp"

namespace spframe {

// Distances closer than this are treated as one neighbour shell when the
// max_neighbors truncation would otherwise split them.
constexpr double kShellTol = 1e-8;

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  std::array<int, 3> image{0, 0, 0};
  double distance = 0.0;
  Vec3 direction{0.0, 0.0, 0.0};

  Vec3 vector() const { return distance * direction; }
};

class PeriodicGraph {
 public:
  PeriodicGraph(Structure s, std::vector<Edge> edges) : structure_(std::move(s)), edges_(std::move(edges)) {
    offsets_.assign(structure_.size() + 1, 0);
    for (const Edge& e : edges_) ++offsets_[e.dst + 1];
    for (std::size_t i = 0; i < structure_.size(); ++i) offsets_[i + 1] += offsets_[i];
  }

  const Structure& structure() const { return structure_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::size_t num_atoms() const { return structure_.size(); }
  std::size_t num_edges() const { return edges_.size(); }
  // Edges with dst == i occupy [begin(i), end(i)).
  std::size_t begin(std::size_t i) const { return offsets_[i]; }
  std::size_t end(std::size_t i) const { return offsets_[i + 1]; }
  std::size_t degree(std::size_t i) const { return end(i) - begin(i); }

  std::vector<std::size_t> sources() const {
    std::vector<std::size_t> v;
    for (const Edge& e : edges_) v.push_back(e.src);
    return v;
  }
  std::vector<std::size_t> destinations() const {
    std::vector<std::size_t> v;
    for (const Edge& e : edges_) v.push_back(e.dst);
    return v;
  }

 private:
  Structure structure_;
  std::vector<Edge> edges_;
  std::vector<std::size_t> offsets_;
};

inline PeriodicGraph build_graph(const Structure& s, double cutoff, std::size_t max_neighbors) {
  if (!(cutoff > 0)) fail<ContractError>("cutoff must be positive");
  if (max_neighbors < 1) fail<ContractError>("max_neighbors must be at least 1");
  const Lattice& lat = s.lattice();
  std::array<int, 3> bound{};
  for (int m = 0; m < 3; ++m) bound[m] = static_cast<int>(std::ceil(cutoff / lat.plane_spacing(m)));

  std::vector<Edge> edges;
  std::vector<Edge> cand;
  for (std::size_t i = 0; i < s.size(); ++i) {
    cand.clear();
    for (std::size_t j = 0; j < s.size(); ++j) {
      const Vec3 df = s.frac()[i] - s.frac()[j];
      for (int a = -bound[0]; a <= bound[0]; ++a)
        for (int b = -bound[1]; b <= bound[1]; ++b)
          for (int c = -bound[2]; c <= bound[2]; ++c) {
            if (i == j && a == 0 && b == 0 && c == 0) continue;
            const Vec3 v = lat.frac_to_cart({df[0] + a, df[1] + b, df[2] + c});
            const double d = norm(v);
            if (d > cutoff || !(d > 0.0)) continue;
            cand.push_back({j, i, {a, b, c}, d, (1.0 / d) * v});
          }
    }
    if (cand.empty())
      fail<GraphConstructionError>("atom " + std::to_string(i) + " (Z=" + std::to_string(s.species()[i]) +
                                   ") has no neighbours within cutoff " + std::to_string(cutoff));
    std::sort(cand.begin(), cand.end(), [](const Edge& x, const Edge& y) {
      return std::tie(x.distance, x.src, x.image) < std::tie(y.distance, y.src, y.image);
    });
    std::size_t keep = std::min(max_neighbors, cand.size());
    while (keep < cand.size() && cand[keep].distance - cand[keep - 1].distance < kShellTol) ++keep;
    edges.insert(edges.end(), cand.begin(), cand.begin() + static_cast<long>(keep));
  }
  return PeriodicGraph(s, std::move(edges));
}

// Gaussian radial basis on evenly spaced centres over [0, cutoff].
inline std::vector<double> rbf_expand(double distance, std::size_t n_centers, double cutoff) {
  if (!(distance > 0)) fail<ContractError>("rbf_expand needs a positive distance");
  if (n_centers < 2) fail<ContractError>("rbf_expand needs at least two centres");
  const double step = cutoff / static_cast<double>(n_centers - 1);
  std::vector<double> out(n_centers);
  for (std::size_t k = 0; k < n_centers; ++k) {
    const double z = (distance - static_cast<double>(k) * step) / step;
    out[k] = std::exp(-z * z);
  }
  return out;
}

inline Tensor rbf_features(const PeriodicGraph& g, std::size_t n_centers, double cutoff) {
  Tensor t({g.num_edges(), n_centers});
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    const auto row = rbf_expand(g.edges()[e].distance, n_centers, cutoff);
    std::copy(row.begin(), row.end(), t.data().begin() + static_cast<long>(e * n_centers));
  }
  return t;
}

inline Tensor direction_matrix(const PeriodicGraph& g) {
  Tensor t({g.num_edges(), 3});
  for (std::size_t e = 0; e < g.num_edges(); ++e)
    for (int c = 0; c < 3; ++c) t[e * 3 + static_cast<std::size_t>(c)] = g.edges()[e].direction[c];
  return t;
}

}  // namespace spframe
