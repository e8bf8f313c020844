#pragma once

#include "gsd/core/mlp.hpp"
#include "gsd/geom/sparse_unet.hpp"
#include "gsd/geom/voxel_grid.hpp"

namespace gsd {

// Per-Gaussian features: the independent point embedding F_p, the voxel
// features scattered back to points F_p', and their fusion.
struct GeometryFeatures {
    Tensor f_identity;   // [N, 32]
    Tensor f_geometric;  // [N, 32]
    Tensor f_fuse;       // [N, 64]
};

// Two-branch geometry feature extractor: the identity branch keeps point-level
// features at full resolution, the geometric branch aggregates local structure
// over the sparse voxel grid; a fusion MLP mixes both.
struct GeometryFeatureNet {
    static constexpr int64_t kBranchWidth = 32;
    static constexpr int64_t kFuseWidth = 64;

    Mlp identity_mlp;  // 3 -> 64 -> 32, 2 layers width 64
    SparseUNet unet;
    Mlp fusion_mlp;    // 64 -> 64 -> 64 -> 64, 3 layers width 64
    bool geometric_enabled = true;  // ablation: identity branch only

    GeometryFeatures forward(const Tensor& positions, const SparseVoxelGrid& grid,
                             const VoxelHierarchy& hierarchy) const {
        if (positions.rank() != 2 || positions.dim(1) != 3)
            throw ShapeError("fuse_features expects positions [N,3]");
        if (grid.point_count() != positions.dim(0))
            throw ContractError("fuse_features: stale point_to_voxel map (" +
                                std::to_string(grid.point_count()) + " entries for " +
                                std::to_string(positions.dim(0)) + " points)");
        GeometryFeatures out;
        out.f_identity = identity_mlp.forward(positions);
        if (geometric_enabled) {
            Tensor voxel_features = unet.forward(hierarchy);
            out.f_geometric = gather_rows(voxel_features, grid.point_to_voxel);
        } else {
            out.f_geometric = Tensor::zeros({positions.dim(0), kBranchWidth});
        }
        out.f_fuse = fusion_mlp.forward(concat_cols({out.f_geometric, out.f_identity}));
        return out;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out = identity_mlp.parameters();
        for (const auto& t : unet.parameters()) out.push_back(t);
        for (const auto& t : fusion_mlp.parameters()) out.push_back(t);
        return out;
    }

    void set_param_names() {
        identity_mlp.set_param_names("feature.identity");
        unet.set_param_names("feature.unet");
        fusion_mlp.set_param_names("feature.fusion");
    }
};

inline GeometryFeatureNet make_feature_net(Rng& rng) {
    GeometryFeatureNet net;
    net.identity_mlp = make_mlp({3, 64, GeometryFeatureNet::kBranchWidth}, rng);
    net.unet = make_sparse_unet(rng);
    net.fusion_mlp = make_mlp({2 * GeometryFeatureNet::kBranchWidth, 64, 64,
                               GeometryFeatureNet::kFuseWidth},
                              rng);
    net.set_param_names();
    return net;
}

}  // namespace gsd
