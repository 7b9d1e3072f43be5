#pragma once

// Synthetic structures and targets: random cells for training data, screw-axis
// structures for the symmetry demonstration, and a geometric target.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "crystal.hpp"
#include "error.hpp"
#include "graph.hpp"
#include "io.hpp"

namespace spframe {

// y = (1/n) Σ_i [ Σ_j exp(−d_ij) + Σ_{j<k} cos θ_jik ]
inline double synthetic_target(const PeriodicGraph& g) {
  double total = 0.0;
  for (std::size_t i = 0; i < g.num_atoms(); ++i) {
    double acc = 0.0;
    for (std::size_t a = g.begin(i); a < g.end(i); ++a) {
      acc += std::exp(-g.edges()[a].distance);
      for (std::size_t b = a + 1; b < g.end(i); ++b) acc += dot(g.edges()[a].direction, g.edges()[b].direction);
    }
    total += acc;
  }
  return total / static_cast<double>(g.num_atoms());
}

inline double synthetic_target(const Structure& s, double cutoff, std::size_t max_neighbors) {
  return synthetic_target(build_graph(s, cutoff, max_neighbors));
}

inline Mat3 lattice_from_parameters(double a, double b, double c, double alpha, double beta, double gamma) {
  const double ca = std::cos(alpha), cb = std::cos(beta), cg = std::cos(gamma), sg = std::sin(gamma);
  const Vec3 l1{a, 0.0, 0.0};
  const Vec3 l2{b * cg, b * sg, 0.0};
  const double cx = c * cb;
  const double cy = c * (ca - cb * cg) / sg;
  const double cz2 = c * c - cx * cx - cy * cy;
  if (!(cz2 > 0)) fail<InvalidLattice>("cell angles do not form a valid lattice");
  const Vec3 l3{cx, cy, std::sqrt(cz2)};
  return from_columns(l1, l2, l3);
}

// Smallest interatomic distance over all periodic images.
inline double min_pair_distance(const Structure& s) {
  double best = INFINITY;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = i; j < s.size(); ++j) {
      if (i == j) {
        for (int k = 0; k < 3; ++k) best = std::min(best, norm(s.lattice().vector(k)));
        continue;
      }
      best = std::min(best, min_image_distance(s, i, j));
    }
  return best;
}

struct RandomStructureOptions {
  std::size_t min_atoms = 2;
  std::size_t max_atoms = 4;
  double min_length = 3.0;
  double max_length = 4.5;
  double min_angle_deg = 70.0;
  double max_angle_deg = 110.0;
  double min_distance = 1.2;
  std::vector<int> species{1, 3, 6, 7, 8, 14};
};

inline Structure random_structure(std::mt19937_64& rng, const RandomStructureOptions& o = {}) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double deg = std::numbers::pi / 180.0;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Mat3 l;
    try {
      l = lattice_from_parameters(uniform(o.min_length, o.max_length), uniform(o.min_length, o.max_length),
                                  uniform(o.min_length, o.max_length), uniform(o.min_angle_deg, o.max_angle_deg) * deg,
                                  uniform(o.min_angle_deg, o.max_angle_deg) * deg,
                                  uniform(o.min_angle_deg, o.max_angle_deg) * deg);
    } catch (const InvalidLattice&) {
      continue;
    }
    const std::size_t n =
        o.min_atoms + static_cast<std::size_t>(unit(rng) * static_cast<double>(o.max_atoms - o.min_atoms + 1));
    std::vector<int> species;
    std::vector<Vec3> frac;
    for (std::size_t i = 0; i < std::min(n, o.max_atoms); ++i) {
      species.push_back(o.species[static_cast<std::size_t>(unit(rng) * static_cast<double>(o.species.size()))]);
      frac.push_back({unit(rng), unit(rng), unit(rng)});
    }
    Structure s(Lattice(l), species, frac);
    if (min_pair_distance(s) >= o.min_distance) return s;
  }
  fail<ContractError>("could not place atoms with the requested minimum distance");
}

// Screw axis along l₃ = (0, 0, c): rotation about z by `angle` degrees
// combined with a translation of c/2. 180° uses a cell with l₁, l₂ in the xy
// plane; 90° needs a square base.
inline StructureFile generate_screw_structure(int angle, double c, std::size_t motif_size, std::uint64_t seed) {
  if (angle != 90 && angle != 180) fail<InputError>("screw angle must be 90 or 180 degrees");
  if (motif_size < 3) fail<InputError>("screw motif needs at least 3 atoms");
  if (!(c > 0)) fail<InputError>("screw cell height must be positive");
  const double deg = std::numbers::pi / 180.0;
  const std::vector<int> palette{6, 8, 14};
  SymmetryOp gen;
  if (angle == 180) {
    gen.w_rot = {{{-1, 0, 0}, {0, -1, 0}, {0, 0, 1}}};
  } else {
    gen.w_rot = {{{0, -1, 0}, {1, 0, 0}, {0, 0, 1}}};
  }
  gen.w_trans = {0.0, 0.0, 0.5};
  const int order = angle == 180 ? 2 : 4;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double a = 3.6 + 0.8 * unit(rng);
    const double b = angle == 180 ? 3.6 + 0.8 * unit(rng) : a;
    const double gamma = angle == 180 ? (75.0 + 30.0 * unit(rng)) * deg : 90.0 * deg;
    const Lattice lattice(lattice_from_parameters(a, b, c, 90.0 * deg, 90.0 * deg, gamma));

    std::vector<SymmetryOp> group{identity_op()};
    for (int k = 1; k < order; ++k) {
      SymmetryOp next = compose(gen, group.back());
      next.w_trans = wrap_frac(next.w_trans);
      group.push_back(next);
    }
    std::vector<int> motif_species;
    std::vector<Vec3> motif;
    for (std::size_t i = 0; i < motif_size; ++i) {
      motif_species.push_back(palette[i % 2 == 0 ? 0 : 1 + (i / 2) % 2]);
      motif.push_back({unit(rng), unit(rng), unit(rng)});
    }
    std::vector<int> species;
    std::vector<Vec3> frac;
    for (const auto& op : group)
      for (std::size_t i = 0; i < motif_size; ++i) {
        species.push_back(motif_species[i]);
        frac.push_back(wrap_frac(spframe::apply(op, motif[i])));
      }
    Structure s(lattice, species, frac);
    if (min_pair_distance(s) < 1.0) continue;
    const auto orb = orbits(s, group);
    const bool paired = orb.size() == motif_size &&
                        std::all_of(orb.begin(), orb.end(), [&](const auto& o) {
                          return o.size() == static_cast<std::size_t>(order);
                        });
    if (!paired) continue;
    return {std::move(s), std::move(group), std::nullopt, {}};
  }
  fail<ContractError>("screw structure generation did not find a general-position motif in 10 attempts");
}

}  // namespace spframe
