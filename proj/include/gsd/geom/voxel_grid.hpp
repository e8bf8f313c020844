#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "gsd/core/tensor.hpp"

namespace gsd {

using VoxelCoord = std::array<int32_t, 3>;

namespace detail {
struct VoxelCoordHash {
    size_t operator()(const VoxelCoord& c) const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (int32_t v : c) {
            h ^= static_cast<uint64_t>(static_cast<uint32_t>(v));
            h *= 0x100000001b3ull;
        }
        return static_cast<size_t>(h);
    }
};
}  // namespace detail

// Sparse occupancy grid over the point cloud: V = floor(P / s) with duplicate
// coordinates merged. Voxel order is lexicographic in (x,y,z), so the layout
// is deterministic regardless of point order.
struct SparseVoxelGrid {
    real grid_size = 0;
    std::vector<VoxelCoord> voxel_coords;   // M unique, sorted
    std::vector<int64_t> point_to_voxel;    // N indices into voxel_coords

    int64_t voxel_count() const { return static_cast<int64_t>(voxel_coords.size()); }
    int64_t point_count() const { return static_cast<int64_t>(point_to_voxel.size()); }
};

inline VoxelCoord voxel_of(const real* p, real s) {
    return {static_cast<int32_t>(std::floor(p[0] / s)),
            static_cast<int32_t>(std::floor(p[1] / s)),
            static_cast<int32_t>(std::floor(p[2] / s))};
}

inline SparseVoxelGrid voxelize(const Tensor& points, real grid_size) {
    if (!(grid_size > 0)) throw ParamError("voxelize: grid size must be positive");
    if (points.rank() != 2 || points.dim(1) != 3 || points.dim(0) < 1)
        throw ShapeError("voxelize expects a non-empty [N,3] tensor");
    const int64_t n = points.dim(0);
    const auto pp = points.data();

    std::vector<VoxelCoord> per_point(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) per_point[i] = voxel_of(pp.data() + 3 * i, grid_size);

    std::vector<VoxelCoord> sorted = per_point;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

    std::unordered_map<VoxelCoord, int64_t, detail::VoxelCoordHash> index;
    index.reserve(sorted.size() * 2);
    for (size_t i = 0; i < sorted.size(); ++i) index.emplace(sorted[i], static_cast<int64_t>(i));

    SparseVoxelGrid grid;
    grid.grid_size = grid_size;
    grid.voxel_coords = std::move(sorted);
    grid.point_to_voxel.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) grid.point_to_voxel[i] = index.at(per_point[i]);
    return grid;
}

// --------------------------------------------------------------------------
// Multi-resolution hierarchy for the U-Net: level 0 is the input grid; each
// coarser level is floor(coords / 2) deduplicated. `parent[i]` maps a voxel
// of this level into the next coarser level; `nbr` is the 3x3x3 submanifold
// neighbor table (-1 where unoccupied), offset-major order.

inline int32_t floor_div2(int32_t v) { return v >= 0 ? v / 2 : (v - 1) / 2; }

struct VoxelLevel {
    std::vector<VoxelCoord> coords;
    std::vector<int64_t> parent;  // into next coarser level (empty for the coarsest)
    std::vector<int64_t> nbr;     // [count * 27]
};

struct VoxelHierarchy {
    std::vector<VoxelLevel> levels;  // [0] = finest
};

inline void build_neighbor_table(VoxelLevel& level) {
    std::unordered_map<VoxelCoord, int64_t, detail::VoxelCoordHash> index;
    index.reserve(level.coords.size() * 2);
    for (size_t i = 0; i < level.coords.size(); ++i)
        index.emplace(level.coords[i], static_cast<int64_t>(i));
    level.nbr.assign(level.coords.size() * 27, -1);
    for (size_t i = 0; i < level.coords.size(); ++i) {
        const VoxelCoord c = level.coords[i];
        int o = 0;
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx, ++o) {
                    const VoxelCoord q{c[0] + dx, c[1] + dy, c[2] + dz};
                    const auto it = index.find(q);
                    if (it != index.end()) level.nbr[27 * i + o] = it->second;
                }
    }
}

inline VoxelHierarchy build_hierarchy(const SparseVoxelGrid& grid, int n_levels = 3) {
    VoxelHierarchy h;
    h.levels.resize(static_cast<size_t>(n_levels));
    h.levels[0].coords = grid.voxel_coords;
    // Anchor at the occupied min corner: coarsening partitions then depend
    // only on relative coordinates, so integer translations of the grid leave
    // every level bit-identical. A uniform shift preserves lexicographic
    // order, so row indices still match grid.voxel_coords.
    if (!h.levels[0].coords.empty()) {
        VoxelCoord lo = h.levels[0].coords[0];
        for (const auto& c : h.levels[0].coords)
            for (int j = 0; j < 3; ++j) lo[j] = std::min(lo[j], c[j]);
        for (auto& c : h.levels[0].coords)
            for (int j = 0; j < 3; ++j) c[j] -= lo[j];
    }
    for (int l = 0; l + 1 < n_levels; ++l) {
        auto& fine = h.levels[static_cast<size_t>(l)];
        auto& coarse = h.levels[static_cast<size_t>(l + 1)];
        std::vector<VoxelCoord> parents(fine.coords.size());
        for (size_t i = 0; i < fine.coords.size(); ++i)
            parents[i] = {floor_div2(fine.coords[i][0]), floor_div2(fine.coords[i][1]),
                          floor_div2(fine.coords[i][2])};
        coarse.coords = parents;
        std::sort(coarse.coords.begin(), coarse.coords.end());
        coarse.coords.erase(std::unique(coarse.coords.begin(), coarse.coords.end()),
                            coarse.coords.end());
        std::unordered_map<VoxelCoord, int64_t, detail::VoxelCoordHash> index;
        for (size_t i = 0; i < coarse.coords.size(); ++i)
            index.emplace(coarse.coords[i], static_cast<int64_t>(i));
        fine.parent.resize(fine.coords.size());
        for (size_t i = 0; i < fine.coords.size(); ++i) fine.parent[i] = index.at(parents[i]);
    }
    for (auto& level : h.levels) build_neighbor_table(level);
    return h;
}

// Embedding input for the geometric branch: integer voxel coordinates
// normalized per component into [0,1] by the occupied extent.
inline Tensor normalized_voxel_coords(const std::vector<VoxelCoord>& coords) {
    const int64_t m = static_cast<int64_t>(coords.size());
    Tensor out = Tensor::zeros({m, 3});
    if (m == 0) return out;
    VoxelCoord lo = coords[0], hi = coords[0];
    for (const auto& c : coords)
        for (int j = 0; j < 3; ++j) {
            lo[j] = std::min(lo[j], c[j]);
            hi[j] = std::max(hi[j], c[j]);
        }
    auto po = out.mutable_data();
    for (int64_t i = 0; i < m; ++i)
        for (int j = 0; j < 3; ++j) {
            const real extent = std::max<real>(1, static_cast<real>(hi[j] - lo[j]));
            po[3 * i + j] = static_cast<real>(coords[i][j] - lo[j]) / extent;
        }
    return out;
}

}  // namespace gsd
