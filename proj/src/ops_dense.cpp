#include <cmath>
#include <memory>

#include "pathcons/ops.hpp"

namespace pathcons {

namespace {

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using RowMajorMutable = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void require(bool cond, const char* msg) {
    if (!cond) throw ConfigError(msg);
}

// Patch matrix with one column per output pixel, one row per (ci, ky, kx).
Eigen::MatrixXd im2col(const DenseTensor& x, int k, int stride, int padding, int ho, int wo) {
    const int ci_n = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ci_n) * k * k,
                                              static_cast<Eigen::Index>(ho) * wo);
    const double* xd = x.data().data();
    for (int ci = 0; ci < ci_n; ++ci) {
        const double* plane = xd + static_cast<std::int64_t>(ci) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const Eigen::Index row = (static_cast<Eigen::Index>(ci) * k + ky) * k + kx;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= h) continue;
                    const double* src = plane + static_cast<std::int64_t>(iy) * w;
                    Eigen::Index col = static_cast<Eigen::Index>(oy) * wo;
                    for (int ox = 0; ox < wo; ++ox, ++col) {
                        const int ix = ox * stride - padding + kx;
                        if (ix >= 0 && ix < w) m(row, col) = src[ix];
                    }
                }
            }
        }
    }
    return m;
}

void col2im_add(Eigen::ArrayXd& gx, const Eigen::MatrixXd& cols, int ci_n, int h, int w, int k, int stride,
                int padding, int ho, int wo) {
    for (int ci = 0; ci < ci_n; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const Eigen::Index row = (static_cast<Eigen::Index>(ci) * k + ky) * k + kx;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= h) continue;
                    const std::int64_t base = (static_cast<std::int64_t>(ci) * h + iy) * w;
                    Eigen::Index col = static_cast<Eigen::Index>(oy) * wo;
                    for (int ox = 0; ox < wo; ++ox, ++col) {
                        const int ix = ox * stride - padding + kx;
                        if (ix >= 0 && ix < w) gx[base + ix] += cols(row, col);
                    }
                }
            }
        }
    }
}

}  // namespace

NodeId conv2d(Graph& g, NodeId x, NodeId kernel, int stride, int padding) {
    const DenseTensor& xv = g.dense(x);
    const DenseTensor& wv = g.dense(kernel);
    require(xv.rank() == 3, "conv2d: input must be (C, H, W)");
    require(wv.rank() == 4, "conv2d: kernel must be (C_out, C_in, k, k)");
    require(stride >= 1, "conv2d: stride must be positive");
    require(padding >= 0, "conv2d: padding must be nonnegative");
    const int co_n = wv.shape()[0], ci_n = wv.shape()[1], k = wv.shape()[2];
    require(wv.shape()[3] == k, "conv2d: kernel must be square");
    require(xv.shape()[0] == ci_n, "conv2d: input channels do not match kernel");
    const int h = xv.shape()[1], w = xv.shape()[2];
    const int ho = (h + 2 * padding - k) / stride + 1;
    const int wo = (w + 2 * padding - k) / stride + 1;
    require(h + 2 * padding >= k && w + 2 * padding >= k && ho > 0 && wo > 0,
            "conv2d: output spatial dims must be positive");

    const Eigen::MatrixXd m = im2col(xv, k, stride, padding, ho, wo);
    RowMajorMap wmap(wv.data().data(), co_n, static_cast<Eigen::Index>(ci_n) * k * k);
    Eigen::ArrayXd out(static_cast<std::int64_t>(co_n) * ho * wo);
    RowMajorMutable(out.data(), co_n, static_cast<Eigen::Index>(ho) * wo).noalias() = wmap * m;

    auto backward = [k, stride, padding, ho, wo](const Graph& gr, const std::vector<NodeId>& in, const Value&,
                                                 const Value& upstream, GradSlots& slots) {
        const DenseTensor& xv2 = gr.dense(in[0]);
        const DenseTensor& wv2 = gr.dense(in[1]);
        const DenseTensor& up = std::get<DenseTensor>(upstream);
        const int co2 = wv2.shape()[0], ci2 = wv2.shape()[1];
        const int h2 = xv2.shape()[1], w2 = xv2.shape()[2];
        RowMajorMap gmap(up.data().data(), co2, static_cast<Eigen::Index>(ho) * wo);
        const Eigen::MatrixXd m2 = im2col(xv2, k, stride, padding, ho, wo);

        Eigen::ArrayXd gw(wv2.size());
        RowMajorMutable(gw.data(), co2, static_cast<Eigen::Index>(ci2) * k * k).noalias() = gmap * m2.transpose();
        slots.add_dense(in[1], gw, wv2.shape());

        RowMajorMap wmap2(wv2.data().data(), co2, static_cast<Eigen::Index>(ci2) * k * k);
        const Eigen::MatrixXd mgrad = wmap2.transpose() * gmap;
        Eigen::ArrayXd gx = Eigen::ArrayXd::Zero(xv2.size());
        col2im_add(gx, mgrad, ci2, h2, w2, k, stride, padding, ho, wo);
        slots.add_dense(in[0], gx, xv2.shape());
    };
    return g.emplace("conv2d", {x, kernel}, DenseTensor({co_n, ho, wo}, std::move(out)), std::move(backward));
}

NodeId channel_bias(Graph& g, NodeId x, NodeId bias) {
    const DenseTensor& xv = g.dense(x);
    const DenseTensor& bv = g.dense(bias);
    require(xv.rank() == 3, "channel_bias: input must be (C, H, W)");
    require(bv.rank() == 1 && bv.shape()[0] == xv.shape()[0], "channel_bias: bias length must equal channels");
    const int c = xv.shape()[0];
    const std::int64_t plane = static_cast<std::int64_t>(xv.shape()[1]) * xv.shape()[2];
    Eigen::ArrayXd out = xv.data();
    for (int i = 0; i < c; ++i) out.segment(i * plane, plane) += bv[i];

    auto backward = [c, plane](const Graph& gr, const std::vector<NodeId>& in, const Value&,
                               const Value& upstream, GradSlots& slots) {
        const DenseTensor& up = std::get<DenseTensor>(upstream);
        slots.add_dense(in[0], up.data(), gr.dense(in[0]).shape());
        Eigen::ArrayXd gb(c);
        for (int i = 0; i < c; ++i) gb[i] = up.data().segment(i * plane, plane).sum();
        slots.add_dense(in[1], gb, gr.dense(in[1]).shape());
    };
    return g.emplace("channel_bias", {x, bias}, DenseTensor(xv.shape(), std::move(out)), std::move(backward));
}

NodeId relu(Graph& g, NodeId x) {
    if (g.is_dense(x)) {
        const DenseTensor& xv = g.dense(x);
        Eigen::ArrayXd out = xv.data().max(0.0);
        auto backward = [](const Graph& gr, const std::vector<NodeId>& in, const Value&, const Value& upstream,
                           GradSlots& slots) {
            const DenseTensor& xv2 = gr.dense(in[0]);
            const DenseTensor& up = std::get<DenseTensor>(upstream);
            Eigen::ArrayXd gx = up.data() * (xv2.data() > 0.0).cast<double>();
            slots.add_dense(in[0], gx, xv2.shape());
        };
        return g.emplace("relu", {x}, DenseTensor(xv.shape(), std::move(out)), std::move(backward));
    }
    const SparseVoxelTensor& xv = g.sparse(x);
    SparseVoxelTensor out = xv;
    out.features = xv.features.cwiseMax(0.0);
    auto backward = [](const Graph& gr, const std::vector<NodeId>& in, const Value&, const Value& upstream,
                       GradSlots& slots) {
        const SparseVoxelTensor& xv2 = gr.sparse(in[0]);
        const SparseVoxelTensor& up = std::get<SparseVoxelTensor>(upstream);
        FeatureMatrix gx = up.features.cwiseProduct((xv2.features.array() > 0.0).cast<double>().matrix());
        slots.add_sparse(in[0], gx, xv2);
    };
    return g.emplace("relu", {x}, std::move(out), std::move(backward));
}

NodeId maxpool2(Graph& g, NodeId x) {
    const DenseTensor& xv = g.dense(x);
    require(xv.rank() == 3, "maxpool2: input must be (C, H, W)");
    const int c = xv.shape()[0], h = xv.shape()[1], w = xv.shape()[2];
    require(h % 2 == 0 && w % 2 == 0, "maxpool2: spatial dims must be divisible by 2");
    const int ho = h / 2, wo = w / 2;
    Eigen::ArrayXd out(static_cast<std::int64_t>(c) * ho * wo);
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
    const double* xd = xv.data().data();
    std::int64_t oi = 0;
    for (int ci = 0; ci < c; ++ci) {
        const std::int64_t base = static_cast<std::int64_t>(ci) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox, ++oi) {
                std::int64_t best = base + static_cast<std::int64_t>(2 * oy) * w + 2 * ox;
                double bv = xd[best];
                const std::int64_t cand[3] = {best + 1, best + w, best + w + 1};
                for (const std::int64_t p : cand) {
                    if (xd[p] > bv) {
                        bv = xd[p];
                        best = p;
                    }
                }
                out[oi] = bv;
                (*argmax)[oi] = best;
            }
        }
    }
    auto backward = [argmax](const Graph& gr, const std::vector<NodeId>& in, const Value&, const Value& upstream,
                             GradSlots& slots) {
        const DenseTensor& xv2 = gr.dense(in[0]);
        const DenseTensor& up = std::get<DenseTensor>(upstream);
        Eigen::ArrayXd gx = Eigen::ArrayXd::Zero(xv2.size());
        for (std::int64_t i = 0; i < up.size(); ++i) gx[(*argmax)[i]] += up[i];
        slots.add_dense(in[0], gx, xv2.shape());
    };
    return g.emplace("maxpool2", {x}, DenseTensor({c, ho, wo}, std::move(out)), std::move(backward));
}

NodeId upsample_nearest(Graph& g, NodeId x, int times) {
    const DenseTensor& xv = g.dense(x);
    require(xv.rank() == 3, "upsample_nearest: input must be (C, H, W)");
    require(times >= 0, "upsample_nearest: times must be nonnegative");
    if (times == 0) {
        // Identity copy keeps the node structure uniform.
        auto backward = [](const Graph& gr, const std::vector<NodeId>& in, const Value&, const Value& upstream,
                           GradSlots& slots) {
            slots.add_dense(in[0], std::get<DenseTensor>(upstream).data(), gr.dense(in[0]).shape());
        };
        return g.emplace("upsample_nearest", {x}, xv, std::move(backward));
    }
    const int c = xv.shape()[0], h = xv.shape()[1], w = xv.shape()[2];
    const int f = 1 << times;
    const int ho = h * f, wo = w * f;
    Eigen::ArrayXd out(static_cast<std::int64_t>(c) * ho * wo);
    const double* xd = xv.data().data();
    for (int ci = 0; ci < c; ++ci) {
        for (int oy = 0; oy < ho; ++oy) {
            const double* src = xd + (static_cast<std::int64_t>(ci) * h + (oy >> times)) * w;
            double* dst = out.data() + (static_cast<std::int64_t>(ci) * ho + oy) * wo;
            for (int ox = 0; ox < wo; ++ox) dst[ox] = src[ox >> times];
        }
    }
    auto backward = [c, h, w, times, ho, wo](const Graph& gr, const std::vector<NodeId>& in, const Value&,
                                             const Value& upstream, GradSlots& slots) {
        const DenseTensor& up = std::get<DenseTensor>(upstream);
        Eigen::ArrayXd gx = Eigen::ArrayXd::Zero(static_cast<std::int64_t>(c) * h * w);
        const double* ud = up.data().data();
        for (int ci = 0; ci < c; ++ci) {
            for (int oy = 0; oy < ho; ++oy) {
                const double* src = ud + (static_cast<std::int64_t>(ci) * ho + oy) * wo;
                double* dst = gx.data() + (static_cast<std::int64_t>(ci) * h + (oy >> times)) * w;
                for (int ox = 0; ox < wo; ++ox) dst[ox >> times] += src[ox];
            }
        }
        slots.add_dense(in[0], gx, gr.dense(in[0]).shape());
    };
    return g.emplace("upsample_nearest", {x}, DenseTensor({c, ho, wo}, std::move(out)), std::move(backward));
}

NodeId add(Graph& g, NodeId x, NodeId y) { return add_scaled(g, x, y, 1.0); }

NodeId mul(Graph& g, NodeId x, NodeId y) {
    const DenseTensor& xv = g.dense(x);
    const DenseTensor& yv = g.dense(y);
    require(xv.same_shape(yv), "mul: shapes must match");
    Eigen::ArrayXd out = xv.data() * yv.data();
    auto backward = [](const Graph& gr, const std::vector<NodeId>& in, const Value&, const Value& upstream,
                       GradSlots& slots) {
        const DenseTensor& up = std::get<DenseTensor>(upstream);
        slots.add_dense(in[0], up.data() * gr.dense(in[1]).data(), gr.dense(in[0]).shape());
        slots.add_dense(in[1], up.data() * gr.dense(in[0]).data(), gr.dense(in[1]).shape());
    };
    return g.emplace("mul", {x, y}, DenseTensor(xv.shape(), std::move(out)), std::move(backward));
}

NodeId scale(Graph& g, NodeId x, double a) {
    const DenseTensor& xv = g.dense(x);
    Eigen::ArrayXd out = xv.data() * a;
    auto backward = [a](const Graph& gr, const std::vector<NodeId>& in, const Value&, const Value& upstream,
                        GradSlots& slots) {
        slots.add_dense(in[0], std::get<DenseTensor>(upstream).data() * a, gr.dense(in[0]).shape());
    };
    return g.emplace("scale", {x}, DenseTensor(xv.shape(), std::move(out)), std::move(backward));
}

NodeId add_scaled(Graph& g, NodeId x, NodeId y, double a) {
    const DenseTensor& xv = g.dense(x);
    const DenseTensor& yv = g.dense(y);
    require(xv.same_shape(yv), "add: shapes must match");
    Eigen::ArrayXd out = xv.data() + a * yv.data();
    auto backward = [a](const Graph& gr, const std::vector<NodeId>& in, const Value&, const Value& upstream,
                        GradSlots& slots) {
        const DenseTensor& up = std::get<DenseTensor>(upstream);
        slots.add_dense(in[0], up.data(), gr.dense(in[0]).shape());
        slots.add_dense(in[1], up.data() * a, gr.dense(in[1]).shape());
    };
    return g.emplace("add_scaled", {x, y}, DenseTensor(xv.shape(), std::move(out)), std::move(backward));
}

NodeId add_n(Graph& g, const std::vector<NodeId>& xs) {
    if (xs.empty()) return g.input(DenseTensor::scalar(0.0));
    const DenseTensor& first = g.dense(xs[0]);
    Eigen::ArrayXd out = first.data();
    for (std::size_t i = 1; i < xs.size(); ++i) {
        const DenseTensor& v = g.dense(xs[i]);
        require(v.same_shape(first), "add_n: shapes must match");
        out += v.data();
    }
    auto backward = [](const Graph& gr, const std::vector<NodeId>& in, const Value&, const Value& upstream,
                       GradSlots& slots) {
        const DenseTensor& up = std::get<DenseTensor>(upstream);
        for (const NodeId id : in) slots.add_dense(id, up.data(), gr.dense(id).shape());
    };
    return g.emplace("add_n", xs, DenseTensor(first.shape(), std::move(out)), std::move(backward));
}

NodeId sum_all(Graph& g, NodeId x) {
    if (g.is_dense(x)) {
        const DenseTensor& xv = g.dense(x);
        const double s = xv.size() == 0 ? 0.0 : xv.data().sum();
        auto backward = [](const Graph& gr, const std::vector<NodeId>& in, const Value&, const Value& upstream,
                           GradSlots& slots) {
            const double gs = std::get<DenseTensor>(upstream).scalar_value();
            const DenseTensor& xv2 = gr.dense(in[0]);
            slots.add_dense(in[0], Eigen::ArrayXd::Constant(xv2.size(), gs), xv2.shape());
        };
        return g.emplace("sum_all", {x}, DenseTensor::scalar(s), std::move(backward));
    }
    const SparseVoxelTensor& xv = g.sparse(x);
    const double s = xv.features.size() == 0 ? 0.0 : xv.features.sum();
    auto backward = [](const Graph& gr, const std::vector<NodeId>& in, const Value&, const Value& upstream,
                       GradSlots& slots) {
        const double gs = std::get<DenseTensor>(upstream).scalar_value();
        const SparseVoxelTensor& xv2 = gr.sparse(in[0]);
        slots.add_sparse(in[0], FeatureMatrix::Constant(xv2.features.rows(), xv2.features.cols(), gs), xv2);
    };
    return g.emplace("sum_all", {x}, DenseTensor::scalar(s), std::move(backward));
}

NodeId mean_all(Graph& g, NodeId x) {
    const std::int64_t n = g.is_dense(x) ? g.dense(x).size() : g.sparse(x).features.size();
    if (n == 0) return g.input(DenseTensor::scalar(0.0));
    return scale(g, sum_all(g, x), 1.0 / static_cast<double>(n));
}

}  // namespace pathcons
