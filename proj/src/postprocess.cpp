#include "clotseg/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iostream>
#include <limits>
#include <string>

#include "clotseg/errors.hpp"

namespace clotseg {
namespace {

/// Union-find with path compression over provisional labels.
struct DisjointSets {
  std::vector<std::int32_t> parent{0};  // label 0 is its own root

  std::int32_t make() {
    parent.push_back(static_cast<std::int32_t>(parent.size()));
    return static_cast<std::int32_t>(parent.size() - 1);
  }

  std::int32_t find(std::int32_t x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] =
          parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }

  void unite(std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a > b) std::swap(a, b);
    parent[static_cast<std::size_t>(b)] = a;
  }
};

}  // namespace

MaskVolume ComponentSet::to_mask() const {
  MaskVolume m(nx, ny, nz);
  for (std::size_t i = 0; i < labels.size(); ++i) m.v[i] = labels[i] != 0 ? 1 : 0;
  return m;
}

ComponentSet connected_components(const MaskVolume& mask, Connectivity connectivity) {
  const bool diag = connectivity == Connectivity::k26;
  ComponentSet out;
  out.nx = mask.nx;
  out.ny = mask.ny;
  out.nz = mask.nz;
  out.labels.assign(static_cast<std::size_t>(mask.size()), 0);

  // Pass 1: provisional labels from the already-scanned half neighbourhood.
  DisjointSets sets;
  std::vector<std::int32_t> prov(static_cast<std::size_t>(mask.size()), 0);
  for (std::int64_t x = 0; x < mask.nx; ++x)
    for (std::int64_t y = 0; y < mask.ny; ++y)
      for (std::int64_t z = 0; z < mask.nz; ++z) {
        const auto idx = static_cast<std::size_t>(mask.index(x, y, z));
        if (!mask.v[idx]) continue;
        std::int32_t adopted = 0;
        for (std::int64_t dx = -1; dx <= 0; ++dx)
          for (std::int64_t dy = -1; dy <= 1; ++dy)
            for (std::int64_t dz = -1; dz <= 1; ++dz) {
              // only visit neighbours scanned before (x,y,z) in row-major order
              if (dx == 0 && (dy > 0 || (dy == 0 && dz >= 0))) continue;
              if (!diag && std::abs(dx) + std::abs(dy) + std::abs(dz) != 1) continue;
              const std::int64_t ax = x + dx, ay = y + dy, az = z + dz;
              if (ax < 0 || ay < 0 || ay >= mask.ny || az < 0 || az >= mask.nz) continue;
              const auto nb = prov[static_cast<std::size_t>(mask.index(ax, ay, az))];
              if (nb == 0) continue;
              if (adopted == 0) {
                adopted = nb;
              } else {
                sets.unite(adopted, nb);
              }
            }
        prov[idx] = adopted != 0 ? adopted : sets.make();
      }

  // Pass 2: map roots to final ids in first-seen scan order and collect.
  std::vector<std::int32_t> root_to_id(sets.parent.size(), 0);
  std::int32_t next_id = 0;
  for (std::int64_t x = 0; x < mask.nx; ++x)
    for (std::int64_t y = 0; y < mask.ny; ++y)
      for (std::int64_t z = 0; z < mask.nz; ++z) {
        const auto idx = static_cast<std::size_t>(mask.index(x, y, z));
        if (!prov[idx]) continue;
        const auto root = sets.find(prov[idx]);
        if (root_to_id[static_cast<std::size_t>(root)] == 0) {
          root_to_id[static_cast<std::size_t>(root)] = ++next_id;
          Component c;
          c.id = next_id;
          out.components.push_back(std::move(c));
        }
        const auto id = root_to_id[static_cast<std::size_t>(root)];
        out.labels[idx] = id;
        auto& comp = out.components[static_cast<std::size_t>(id - 1)];
        comp.voxels.push_back(static_cast<std::int64_t>(idx));
        ++comp.voxel_count;
        comp.center[0] += static_cast<double>(x);
        comp.center[1] += static_cast<double>(y);
        comp.center[2] += static_cast<double>(z);
      }
  for (auto& comp : out.components) {
    for (auto& c : comp.center) c /= static_cast<double>(comp.voxel_count);
  }
  return out;
}

namespace {

ComponentSet keep_if(const ComponentSet& cs, const std::vector<bool>& keep) {
  ComponentSet out;
  out.nx = cs.nx;
  out.ny = cs.ny;
  out.nz = cs.nz;
  out.labels.assign(cs.labels.size(), 0);
  for (std::size_t i = 0; i < cs.components.size(); ++i) {
    if (!keep[i]) continue;
    out.components.push_back(cs.components[i]);
    for (auto v : cs.components[i].voxels)
      out.labels[static_cast<std::size_t>(v)] = cs.components[i].id;
  }
  return out;
}

}  // namespace

ComponentSet filter_small(const ComponentSet& cs, std::int64_t n_pixels) {
  std::vector<bool> keep(cs.components.size());
  for (std::size_t i = 0; i < cs.components.size(); ++i)
    keep[i] = cs.components[i].voxel_count >= n_pixels;
  return keep_if(cs, keep);
}

ComponentSet keep_biggest(const ComponentSet& cs, double alpha) {
  if (alpha <= 0.0 || alpha > 1.0) {
    throw ValueError("keep_biggest: alpha must lie in (0,1], got " + std::to_string(alpha));
  }
  std::int64_t max_count = 0;
  for (const auto& c : cs.components) max_count = std::max(max_count, c.voxel_count);
  std::vector<bool> keep(cs.components.size());
  for (std::size_t i = 0; i < cs.components.size(); ++i)
    keep[i] = static_cast<double>(cs.components[i].voxel_count) >=
              alpha * static_cast<double>(max_count);
  return keep_if(cs, keep);
}

ComponentSet lesion_distance_filter(const ComponentSet& cs, const MaskVolume& lesion,
                                    double n_dist, std::array<float, 3> spacing) {
  if (lesion.count() == 0) {
    std::cerr << "[clotseg] warning: empty lesion mask, distance filter skipped\n";
    return cs;
  }
  double lx = 0, ly = 0, lz = 0;
  std::int64_t n = 0;
  for (std::int64_t x = 0; x < lesion.nx; ++x)
    for (std::int64_t y = 0; y < lesion.ny; ++y)
      for (std::int64_t z = 0; z < lesion.nz; ++z)
        if (lesion.at(x, y, z)) {
          lx += static_cast<double>(x);
          ly += static_cast<double>(y);
          lz += static_cast<double>(z);
          ++n;
        }
  lx /= static_cast<double>(n);
  ly /= static_cast<double>(n);
  lz /= static_cast<double>(n);

  std::vector<double> dist(cs.components.size());
  double min_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cs.components.size(); ++i) {
    const auto& c = cs.components[i].center;
    const double dx = (c[0] - lx) * static_cast<double>(spacing[0]);
    const double dy = (c[1] - ly) * static_cast<double>(spacing[1]);
    const double dz = (c[2] - lz) * static_cast<double>(spacing[2]);
    dist[i] = std::sqrt(dx * dx + dy * dy + dz * dz);
    min_dist = std::min(min_dist, dist[i]);
  }
  std::vector<bool> keep(cs.components.size());
  for (std::size_t i = 0; i < cs.components.size(); ++i)
    keep[i] = std::abs(dist[i] - min_dist) < n_dist;
  return keep_if(cs, keep);
}

MaskVolume threshold_growth(const ProbVolume& prob, const MaskVolume& mask, float t) {
  if (prob.nx != mask.nx || prob.ny != mask.ny || prob.nz != mask.nz) {
    throw ShapeError("threshold_growth: probability and mask grids disagree");
  }
  MaskVolume out = mask;
  std::deque<std::int64_t> queue;
  for (std::int64_t i = 0; i < out.size(); ++i)
    if (out.v[static_cast<std::size_t>(i)]) queue.push_back(i);
  while (!queue.empty()) {
    const std::int64_t cur = queue.front();
    queue.pop_front();
    const std::int64_t x = cur / (out.ny * out.nz);
    const std::int64_t y = (cur / out.nz) % out.ny;
    const std::int64_t z = cur % out.nz;
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          const std::int64_t ax = x + dx, ay = y + dy, az = z + dz;
          if (ax < 0 || ax >= out.nx || ay < 0 || ay >= out.ny || az < 0 || az >= out.nz)
            continue;
          const auto ni = static_cast<std::size_t>(out.index(ax, ay, az));
          if (!out.v[ni] && prob.p[ni] > t) {
            out.v[ni] = 1;
            queue.push_back(static_cast<std::int64_t>(ni));
          }
        }
  }
  return out;
}

void PostConfig::validate() const {
  if (n_pixels < 0) throw ValueError("postprocess: n_pixels must be >= 0");
  if (n_dist < 0.0) throw ValueError("postprocess: n_dist must be >= 0");
  if (threshold <= 0.0 || threshold >= 1.0) {
    throw ValueError("postprocess: threshold must lie in (0,1)");
  }
  if (alpha_big <= 0.0 || alpha_big > 1.0) {
    throw ValueError("postprocess: alpha_big must lie in (0,1]");
  }
}

MaskVolume run_postprocess(const ProbVolume& prob, const MaskVolume& initial,
                           const MaskVolume& lesion, const PostConfig& cfg,
                           std::array<float, 3> spacing) {
  cfg.validate();
  auto cs = connected_components(initial, cfg.connectivity);
  cs = filter_small(cs, cfg.n_pixels);
  cs = lesion_distance_filter(cs, lesion, cfg.n_dist, spacing);
  cs = keep_biggest(cs, cfg.alpha_big);
  return threshold_growth(prob, cs.to_mask(), static_cast<float>(cfg.threshold));
}

}  // namespace clotseg
