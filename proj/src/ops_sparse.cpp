#include <cmath>
#include <unordered_map>

#include "pathcons/ops.hpp"

namespace pathcons {

namespace {

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void require(bool cond, const char* msg) {
    if (!cond) throw ConfigError(msg);
}

void require_same_occupancy(const SparseVoxelTensor& a, const SparseVoxelTensor& b, const char* op) {
    if (a.grid_shape != b.grid_shape || a.indices != b.indices) {
        throw ConfigError(std::string(op) + ": occupancy mismatch");
    }
}

// Per-offset (C_in x C_out) slice of a (C_out, C_in, k, k, k) kernel.
Eigen::MatrixXd kernel_slice(const DenseTensor& w, int offset, int ci_n, int co_n, int k3) {
    Eigen::MatrixXd m(ci_n, co_n);
    const double* wd = w.data().data();
    for (int co = 0; co < co_n; ++co) {
        for (int ci = 0; ci < ci_n; ++ci) {
            m(ci, co) = wd[(static_cast<std::int64_t>(co) * ci_n + ci) * k3 + offset];
        }
    }
    return m;
}

}  // namespace

std::shared_ptr<const Rulebook> build_rulebook(const std::vector<VoxelIndex>& in_indices,
                                               std::array<int, 3> grid, int kernel, int stride) {
    require(kernel >= 1 && kernel % 2 == 1, "sparse_conv3d: kernel size must be odd");
    require(stride >= 1, "sparse_conv3d: stride must be positive");
    if (stride > 1) {
        for (int a = 0; a < 3; ++a) {
            if (grid[a] % stride != 0) {
                throw ConfigError("sparse_conv3d: stride must divide grid dimensions");
            }
        }
    }
    auto rb = std::make_shared<Rulebook>();
    rb->in_grid = grid;
    rb->kernel = kernel;
    rb->stride = stride;
    rb->out_grid = {grid[0] / stride, grid[1] / stride, grid[2] / stride};

    std::unordered_map<std::int64_t, int> row_of;
    row_of.reserve(in_indices.size() * 2);
    for (std::size_t i = 0; i < in_indices.size(); ++i) {
        row_of[linear_voxel_key(in_indices[i], grid)] = static_cast<int>(i);
    }

    if (stride == 1) {
        rb->out_indices = in_indices;
    } else {
        std::vector<VoxelIndex> outs;
        outs.reserve(in_indices.size());
        for (const VoxelIndex& v : in_indices) {
            outs.push_back({v[0] / stride, v[1] / stride, v[2] / stride});
        }
        std::sort(outs.begin(), outs.end(), lex_less);
        outs.erase(std::unique(outs.begin(), outs.end()), outs.end());
        rb->out_indices = std::move(outs);
    }

    const int half = kernel / 2;
    rb->pairs.assign(static_cast<std::size_t>(kernel) * kernel * kernel, {});
    for (std::size_t r = 0; r < rb->out_indices.size(); ++r) {
        const VoxelIndex& o = rb->out_indices[r];
        const int bx = o[0] * stride, by = o[1] * stride, bz = o[2] * stride;
        int offset = 0;
        for (int a = 0; a < kernel; ++a) {
            for (int b = 0; b < kernel; ++b) {
                for (int c = 0; c < kernel; ++c, ++offset) {
                    const int nx = bx + a - half, ny = by + b - half, nz = bz + c - half;
                    if (nx < 0 || ny < 0 || nz < 0 || nx >= grid[0] || ny >= grid[1] || nz >= grid[2]) continue;
                    auto it = row_of.find(linear_voxel_key({nx, ny, nz}, grid));
                    if (it == row_of.end()) continue;
                    rb->pairs[offset].push_back({it->second, static_cast<int>(r)});
                }
            }
        }
    }
    return rb;
}

NodeId sparse_conv3d(Graph& g, NodeId x, NodeId kernel, int stride, std::shared_ptr<const Rulebook> rulebook) {
    const SparseVoxelTensor& xv = g.sparse(x);
    const DenseTensor& wv = g.dense(kernel);
    require(wv.rank() == 5, "sparse_conv3d: kernel must be (C_out, C_in, k, k, k)");
    const int co_n = wv.shape()[0], ci_n = wv.shape()[1], k = wv.shape()[2];
    require(wv.shape()[3] == k && wv.shape()[4] == k, "sparse_conv3d: kernel must be cubic");
    require(xv.channels == ci_n, "sparse_conv3d: input channels do not match kernel");

    if (!rulebook) {
        rulebook = build_rulebook(xv.indices, xv.grid_shape, k, stride);
    } else {
        require(rulebook->kernel == k && rulebook->stride == stride && rulebook->in_grid == xv.grid_shape &&
                    rulebook->pairs.size() == static_cast<std::size_t>(k) * k * k,
                "sparse_conv3d: rulebook does not match call");
    }
    const int k3 = k * k * k;
    const Eigen::Index n_out = static_cast<Eigen::Index>(rulebook->out_indices.size());

    FeatureMatrix out = FeatureMatrix::Zero(n_out, co_n);
    for (int offset = 0; offset < k3; ++offset) {
        const auto& pairs = rulebook->pairs[offset];
        if (pairs.empty()) continue;
        const Eigen::MatrixXd w_o = kernel_slice(wv, offset, ci_n, co_n, k3);
        FeatureMatrix gathered(static_cast<Eigen::Index>(pairs.size()), ci_n);
        for (std::size_t p = 0; p < pairs.size(); ++p) gathered.row(p) = xv.features.row(pairs[p].first);
        const FeatureMatrix contrib = gathered * w_o;
        for (std::size_t p = 0; p < pairs.size(); ++p) out.row(pairs[p].second) += contrib.row(p);
    }

    SparseVoxelTensor result(rulebook->out_grid, co_n, rulebook->out_indices, std::move(out));

    auto backward = [rulebook, ci_n, co_n, k3](const Graph& gr, const std::vector<NodeId>& in, const Value&,
                                               const Value& upstream, GradSlots& slots) {
        const SparseVoxelTensor& xv2 = gr.sparse(in[0]);
        const DenseTensor& wv2 = gr.dense(in[1]);
        const SparseVoxelTensor& up = std::get<SparseVoxelTensor>(upstream);

        Eigen::ArrayXd gw = Eigen::ArrayXd::Zero(wv2.size());
        FeatureMatrix gx = FeatureMatrix::Zero(xv2.features.rows(), xv2.features.cols());
        for (int offset = 0; offset < k3; ++offset) {
            const auto& pairs = rulebook->pairs[offset];
            if (pairs.empty()) continue;
            FeatureMatrix x_g(static_cast<Eigen::Index>(pairs.size()), ci_n);
            FeatureMatrix g_g(static_cast<Eigen::Index>(pairs.size()), co_n);
            for (std::size_t p = 0; p < pairs.size(); ++p) {
                x_g.row(p) = xv2.features.row(pairs[p].first);
                g_g.row(p) = up.features.row(pairs[p].second);
            }
            const Eigen::MatrixXd gw_o = x_g.transpose() * g_g;  // (C_in x C_out)
            for (int co = 0; co < co_n; ++co) {
                for (int ci = 0; ci < ci_n; ++ci) {
                    gw[(static_cast<std::int64_t>(co) * ci_n + ci) * k3 + offset] += gw_o(ci, co);
                }
            }
            const Eigen::MatrixXd w_o = kernel_slice(wv2, offset, ci_n, co_n, k3);
            const FeatureMatrix gx_contrib = g_g * w_o.transpose();
            for (std::size_t p = 0; p < pairs.size(); ++p) gx.row(pairs[p].first) += gx_contrib.row(p);
        }
        slots.add_dense(in[1], gw, wv2.shape());
        slots.add_sparse(in[0], gx, xv2);
    };
    return g.emplace("sparse_conv3d", {x, kernel}, std::move(result), std::move(backward));
}

NodeId sparse_bias(Graph& g, NodeId x, NodeId bias) {
    const SparseVoxelTensor& xv = g.sparse(x);
    const DenseTensor& bv = g.dense(bias);
    require(bv.rank() == 1 && bv.shape()[0] == xv.channels, "sparse_bias: bias length must equal channels");
    SparseVoxelTensor out = xv;
    for (int c = 0; c < xv.channels; ++c) out.features.col(c).array() += bv[c];
    auto backward = [](const Graph& gr, const std::vector<NodeId>& in, const Value&, const Value& upstream,
                       GradSlots& slots) {
        const SparseVoxelTensor& xv2 = gr.sparse(in[0]);
        const SparseVoxelTensor& up = std::get<SparseVoxelTensor>(upstream);
        slots.add_sparse(in[0], up.features, xv2);
        Eigen::ArrayXd gb(xv2.channels);
        for (int c = 0; c < xv2.channels; ++c) gb[c] = up.features.col(c).sum();
        slots.add_dense(in[1], gb, gr.dense(in[1]).shape());
    };
    return g.emplace("sparse_bias", {x, bias}, std::move(out), std::move(backward));
}

namespace {

NodeId sparse_downsample2(Graph& g, NodeId x) {
    const SparseVoxelTensor& xv = g.sparse(x);
    for (int a = 0; a < 3; ++a) {
        require(xv.grid_shape[a] % 2 == 0, "downsample: grid dims must be divisible by 2");
    }
    const std::array<int, 3> out_grid{xv.grid_shape[0] / 2, xv.grid_shape[1] / 2, xv.grid_shape[2] / 2};

    std::vector<VoxelIndex> outs;
    outs.reserve(xv.indices.size());
    for (const VoxelIndex& v : xv.indices) outs.push_back({v[0] / 2, v[1] / 2, v[2] / 2});
    std::sort(outs.begin(), outs.end(), lex_less);
    outs.erase(std::unique(outs.begin(), outs.end()), outs.end());

    std::unordered_map<std::int64_t, int> out_row;
    out_row.reserve(outs.size() * 2);
    for (std::size_t i = 0; i < outs.size(); ++i) out_row[linear_voxel_key(outs[i], out_grid)] = static_cast<int>(i);

    const int c = xv.channels;
    FeatureMatrix feats(static_cast<Eigen::Index>(outs.size()), c);
    auto routing = std::make_shared<Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        static_cast<Eigen::Index>(outs.size()), c);
    routing->setConstant(-1);
    // Canonical input order plus strict > keeps the merge order-independent.
    for (std::size_t i = 0; i < xv.indices.size(); ++i) {
        const VoxelIndex& v = xv.indices[i];
        const int r = out_row.at(linear_voxel_key({v[0] / 2, v[1] / 2, v[2] / 2}, out_grid));
        for (int ch = 0; ch < c; ++ch) {
            const double val = xv.features(static_cast<Eigen::Index>(i), ch);
            if ((*routing)(r, ch) < 0 || val > feats(r, ch)) {
                feats(r, ch) = val;
                (*routing)(r, ch) = static_cast<int>(i);
            }
        }
    }

    SparseVoxelTensor result(out_grid, c, std::move(outs), std::move(feats));
    auto backward = [routing](const Graph& gr, const std::vector<NodeId>& in, const Value&, const Value& upstream,
                              GradSlots& slots) {
        const SparseVoxelTensor& xv2 = gr.sparse(in[0]);
        const SparseVoxelTensor& up = std::get<SparseVoxelTensor>(upstream);
        FeatureMatrix gx = FeatureMatrix::Zero(xv2.features.rows(), xv2.features.cols());
        for (Eigen::Index r = 0; r < routing->rows(); ++r) {
            for (Eigen::Index ch = 0; ch < routing->cols(); ++ch) {
                gx((*routing)(r, ch), ch) += up.features(r, ch);
            }
        }
        slots.add_sparse(in[0], gx, xv2);
    };
    return g.emplace("sparse_downsample2", {x}, std::move(result), std::move(backward));
}

}  // namespace

NodeId downsample(Graph& g, NodeId x, int factor) {
    require(factor == 2, "downsample: only factor 2 is supported");
    return g.is_dense(x) ? maxpool2(g, x) : sparse_downsample2(g, x);
}

NodeId fuse_sum(Graph& g, NodeId a, NodeId b) {
    const SparseVoxelTensor& av = g.sparse(a);
    const SparseVoxelTensor& bv = g.sparse(b);
    require_same_occupancy(av, bv, "fuse_sum");
    require(av.channels == bv.channels, "fuse_sum: channel counts must match");
    SparseVoxelTensor out = av;
    out.features += bv.features;
    auto backward = [](const Graph& gr, const std::vector<NodeId>& in, const Value&, const Value& upstream,
                       GradSlots& slots) {
        const SparseVoxelTensor& up = std::get<SparseVoxelTensor>(upstream);
        slots.add_sparse(in[0], up.features, gr.sparse(in[0]));
        slots.add_sparse(in[1], up.features, gr.sparse(in[1]));
    };
    return g.emplace("fuse_sum", {a, b}, std::move(out), std::move(backward));
}

NodeId fuse_concat(Graph& g, NodeId a, NodeId b) {
    const SparseVoxelTensor& av = g.sparse(a);
    const SparseVoxelTensor& bv = g.sparse(b);
    require_same_occupancy(av, bv, "fuse_concat");
    SparseVoxelTensor out;
    out.grid_shape = av.grid_shape;
    out.channels = av.channels + bv.channels;
    out.indices = av.indices;
    out.features.resize(av.features.rows(), out.channels);
    out.features.leftCols(av.channels) = av.features;
    out.features.rightCols(bv.channels) = bv.features;
    auto backward = [ca = av.channels, cb = bv.channels](const Graph& gr, const std::vector<NodeId>& in,
                                                         const Value&, const Value& upstream, GradSlots& slots) {
        const SparseVoxelTensor& up = std::get<SparseVoxelTensor>(upstream);
        slots.add_sparse(in[0], up.features.leftCols(ca), gr.sparse(in[0]));
        slots.add_sparse(in[1], up.features.rightCols(cb), gr.sparse(in[1]));
    };
    return g.emplace("fuse_concat", {a, b}, std::move(out), std::move(backward));
}

NodeId sparse_linear(Graph& g, NodeId x, NodeId weight, NodeId bias) {
    const SparseVoxelTensor& xv = g.sparse(x);
    const DenseTensor& wv = g.dense(weight);
    const DenseTensor& bv = g.dense(bias);
    require(wv.rank() == 2, "sparse_linear: weight must be (K, C)");
    require(wv.shape()[1] == xv.channels, "sparse_linear: weight columns must equal channels");
    const int k = wv.shape()[0];
    require(bv.rank() == 1 && bv.shape()[0] == k, "sparse_linear: bias length must equal K");

    const Eigen::Index n = xv.features.rows();
    RowMajorMap wmap(wv.data().data(), k, xv.channels);
    Eigen::ArrayXd out(n * k);
    Eigen::Map<FeatureMatrix> omap(out.data(), n, k);
    omap.noalias() = xv.features * wmap.transpose();
    for (int j = 0; j < k; ++j) omap.col(j).array() += bv[j];

    auto backward = [k](const Graph& gr, const std::vector<NodeId>& in, const Value&, const Value& upstream,
                        GradSlots& slots) {
        const SparseVoxelTensor& xv2 = gr.sparse(in[0]);
        const DenseTensor& wv2 = gr.dense(in[1]);
        const DenseTensor& up = std::get<DenseTensor>(upstream);
        const Eigen::Index n2 = xv2.features.rows();
        Eigen::Map<const FeatureMatrix> gmap(up.data().data(), n2, k);

        Eigen::ArrayXd gw(wv2.size());
        Eigen::Map<FeatureMatrix>(gw.data(), k, xv2.channels).noalias() = gmap.transpose() * xv2.features;
        slots.add_dense(in[1], gw, wv2.shape());

        Eigen::ArrayXd gb(k);
        for (int j = 0; j < k; ++j) gb[j] = gmap.col(j).sum();
        slots.add_dense(in[2], gb, gr.dense(in[2]).shape());

        RowMajorMap wmap2(wv2.data().data(), k, xv2.channels);
        FeatureMatrix gx = gmap * wmap2;
        slots.add_sparse(in[0], gx, xv2);
    };
    return g.emplace("sparse_linear", {x, weight, bias},
                     DenseTensor({static_cast<int>(n), k}, std::move(out)), std::move(backward));
}

NodeId sparse_select_rows(Graph& g, NodeId x, std::shared_ptr<const std::vector<int>> rows,
                          std::shared_ptr<const std::vector<VoxelIndex>> sub_indices) {
    const SparseVoxelTensor& xv = g.sparse(x);
    require(rows->size() == sub_indices->size(), "sparse_select_rows: rows/indices length mismatch");
    FeatureMatrix feats(static_cast<Eigen::Index>(rows->size()), xv.channels);
    for (std::size_t i = 0; i < rows->size(); ++i) {
        const int r = (*rows)[i];
        require(r >= 0 && r < xv.features.rows(), "sparse_select_rows: row out of range");
        require(xv.indices[r] == (*sub_indices)[i], "sparse_select_rows: index list does not match rows");
        feats.row(static_cast<Eigen::Index>(i)) = xv.features.row(r);
    }
    SparseVoxelTensor result(xv.grid_shape, xv.channels, *sub_indices, std::move(feats));
    auto backward = [rows](const Graph& gr, const std::vector<NodeId>& in, const Value&, const Value& upstream,
                           GradSlots& slots) {
        const SparseVoxelTensor& xv2 = gr.sparse(in[0]);
        const SparseVoxelTensor& up = std::get<SparseVoxelTensor>(upstream);
        FeatureMatrix gx = FeatureMatrix::Zero(xv2.features.rows(), xv2.features.cols());
        for (std::size_t i = 0; i < rows->size(); ++i) {
            gx.row((*rows)[i]) += up.features.row(static_cast<Eigen::Index>(i));
        }
        slots.add_sparse(in[0], gx, xv2);
    };
    return g.emplace("sparse_select_rows", {x}, std::move(result), std::move(backward));
}

NodeId gather_pixels(Graph& g, NodeId x, std::shared_ptr<const PixelGather> query, std::array<int, 3> grid,
                     std::shared_ptr<const std::vector<VoxelIndex>> occupancy, QueryMode mode) {
    const DenseTensor& xv = g.dense(x);
    require(xv.rank() == 3, "gather_pixels: input must be (C, H, W)");
    const std::size_t n = occupancy->size();
    require(query->u.size() == n && query->v.size() == n && query->valid.size() == n,
            "gather_pixels: query length must equal occupancy size");
    const int c = xv.shape()[0], h = xv.shape()[1], w = xv.shape()[2];
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;

    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };

    FeatureMatrix feats = FeatureMatrix::Zero(static_cast<Eigen::Index>(n), c);
    const double* xd = xv.data().data();
    if (mode == QueryMode::Nearest) {
        for (std::size_t r = 0; r < n; ++r) {
            if (!query->valid[r]) continue;
            const int pi = clampi(static_cast<int>(std::floor(query->v[r])), h - 1);
            const int pj = clampi(static_cast<int>(std::floor(query->u[r])), w - 1);
            const std::int64_t at = static_cast<std::int64_t>(pi) * w + pj;
            for (int ch = 0; ch < c; ++ch) feats(static_cast<Eigen::Index>(r), ch) = xd[ch * plane + at];
        }
    } else {
        for (std::size_t r = 0; r < n; ++r) {
            if (!query->valid[r]) continue;
            const double fu = query->u[r] - 0.5, fv = query->v[r] - 0.5;
            const int j0 = static_cast<int>(std::floor(fu)), i0 = static_cast<int>(std::floor(fv));
            const double tj = fu - j0, ti = fv - i0;
            const int j0c = clampi(j0, w - 1), j1c = clampi(j0 + 1, w - 1);
            const int i0c = clampi(i0, h - 1), i1c = clampi(i0 + 1, h - 1);
            const double w00 = (1 - ti) * (1 - tj), w01 = (1 - ti) * tj, w10 = ti * (1 - tj), w11 = ti * tj;
            for (int ch = 0; ch < c; ++ch) {
                const double* pl = xd + static_cast<std::int64_t>(ch) * plane;
                feats(static_cast<Eigen::Index>(r), ch) =
                    w00 * pl[static_cast<std::int64_t>(i0c) * w + j0c] + w01 * pl[static_cast<std::int64_t>(i0c) * w + j1c] +
                    w10 * pl[static_cast<std::int64_t>(i1c) * w + j0c] + w11 * pl[static_cast<std::int64_t>(i1c) * w + j1c];
            }
        }
    }

    SparseVoxelTensor result(grid, c, *occupancy, std::move(feats));
    auto backward = [query, mode, clampi](const Graph& gr, const std::vector<NodeId>& in, const Value&,
                                          const Value& upstream, GradSlots& slots) {
        const DenseTensor& xv2 = gr.dense(in[0]);
        const SparseVoxelTensor& up = std::get<SparseVoxelTensor>(upstream);
        const int c2 = xv2.shape()[0], h2 = xv2.shape()[1], w2 = xv2.shape()[2];
        const std::int64_t plane2 = static_cast<std::int64_t>(h2) * w2;
        Eigen::ArrayXd gx = Eigen::ArrayXd::Zero(xv2.size());
        const std::size_t n2 = query->valid.size();
        if (mode == QueryMode::Nearest) {
            for (std::size_t r = 0; r < n2; ++r) {
                if (!query->valid[r]) continue;
                const int pi = clampi(static_cast<int>(std::floor(query->v[r])), h2 - 1);
                const int pj = clampi(static_cast<int>(std::floor(query->u[r])), w2 - 1);
                const std::int64_t at = static_cast<std::int64_t>(pi) * w2 + pj;
                for (int ch = 0; ch < c2; ++ch) gx[ch * plane2 + at] += up.features(static_cast<Eigen::Index>(r), ch);
            }
        } else {
            for (std::size_t r = 0; r < n2; ++r) {
                if (!query->valid[r]) continue;
                const double fu = query->u[r] - 0.5, fv = query->v[r] - 0.5;
                const int j0 = static_cast<int>(std::floor(fu)), i0 = static_cast<int>(std::floor(fv));
                const double tj = fu - j0, ti = fv - i0;
                const int j0c = clampi(j0, w2 - 1), j1c = clampi(j0 + 1, w2 - 1);
                const int i0c = clampi(i0, h2 - 1), i1c = clampi(i0 + 1, h2 - 1);
                const double wt[4] = {(1 - ti) * (1 - tj), (1 - ti) * tj, ti * (1 - tj), ti * tj};
                const std::int64_t at[4] = {static_cast<std::int64_t>(i0c) * w2 + j0c,
                                            static_cast<std::int64_t>(i0c) * w2 + j1c,
                                            static_cast<std::int64_t>(i1c) * w2 + j0c,
                                            static_cast<std::int64_t>(i1c) * w2 + j1c};
                for (int ch = 0; ch < c2; ++ch) {
                    const double gv = up.features(static_cast<Eigen::Index>(r), ch);
                    for (int t = 0; t < 4; ++t) gx[ch * plane2 + at[t]] += wt[t] * gv;
                }
            }
        }
        slots.add_dense(in[0], gx, xv2.shape());
    };
    return g.emplace("gather_pixels", {x}, std::move(result), std::move(backward));
}

}  // namespace pathcons
