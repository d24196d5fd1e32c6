#include <cmath>

#include "pathcons/ops.hpp"

namespace pathcons {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw ConfigError(msg);
}

struct CosineStats {
    std::vector<int> rows;
    std::vector<double> na, nb, dot;
};

}  // namespace

NodeId softmax_cross_entropy(Graph& g, NodeId logits, std::shared_ptr<const std::vector<int>> labels) {
    const DenseTensor& zv = g.dense(logits);
    require(zv.rank() == 2, "softmax_cross_entropy: logits must be (N, K)");
    const int n = zv.shape()[0], k = zv.shape()[1];
    require(static_cast<int>(labels->size()) == n, "softmax_cross_entropy: labels length must equal rows");
    require(n > 0, "softmax_cross_entropy: empty logits");

    auto probs = std::make_shared<FeatureMatrix>(n, k);
    Eigen::Map<const FeatureMatrix> zmap(zv.data().data(), n, k);
    double loss = 0.0;
    for (int r = 0; r < n; ++r) {
        const int y = (*labels)[r];
        require(y >= 0 && y < k, "softmax_cross_entropy: label out of range");
        const double m = zmap.row(r).maxCoeff();
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += std::exp(zmap(r, j) - m);
        const double lse = m + std::log(denom);
        for (int j = 0; j < k; ++j) (*probs)(r, j) = std::exp(zmap(r, j) - lse);
        loss += lse - zmap(r, y);
    }
    loss /= n;

    auto backward = [probs, labels, n, k](const Graph& gr, const std::vector<NodeId>& in, const Value&,
                                          const Value& upstream, GradSlots& slots) {
        const double gs = std::get<DenseTensor>(upstream).scalar_value() / n;
        Eigen::ArrayXd gz(static_cast<std::int64_t>(n) * k);
        Eigen::Map<FeatureMatrix> gmap(gz.data(), n, k);
        gmap = *probs * gs;
        for (int r = 0; r < n; ++r) gmap(r, (*labels)[r]) -= gs;
        slots.add_dense(in[0], gz, gr.dense(in[0]).shape());
    };
    return g.emplace("softmax_cross_entropy", {logits}, DenseTensor::scalar(loss), std::move(backward));
}

LossResult cosine_consistency_loss(Graph& g, NodeId a, NodeId b,
                                   std::shared_ptr<const std::vector<std::uint8_t>> mask, double norm_guard) {
    const SparseVoxelTensor& av = g.sparse(a);
    const SparseVoxelTensor& bv = g.sparse(b);
    if (av.grid_shape != bv.grid_shape || av.indices != bv.indices || av.channels != bv.channels) {
        throw ConfigError("cosine_consistency_loss: operands must share grid, occupancy and channels");
    }
    const std::size_t n = av.indices.size();
    require(!mask || mask->size() == n, "cosine_consistency_loss: mask length must equal occupancy");

    auto stats = std::make_shared<CosineStats>();
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (mask && !(*mask)[r]) continue;
        const double na = av.features.row(static_cast<Eigen::Index>(r)).norm();
        const double nb = bv.features.row(static_cast<Eigen::Index>(r)).norm();
        if (na < norm_guard || nb < norm_guard) continue;
        const double dot = av.features.row(static_cast<Eigen::Index>(r)).dot(bv.features.row(static_cast<Eigen::Index>(r)));
        stats->rows.push_back(static_cast<int>(r));
        stats->na.push_back(na);
        stats->nb.push_back(nb);
        stats->dot.push_back(dot);
        acc += dot / (na * nb);
    }
    if (stats->rows.empty()) {
        return {g.input(DenseTensor::scalar(0.0)), true};
    }
    const double m = static_cast<double>(stats->rows.size());
    const double loss = -acc / m;

    auto backward = [stats, m](const Graph& gr, const std::vector<NodeId>& in, const Value&, const Value& upstream,
                               GradSlots& slots) {
        const SparseVoxelTensor& av2 = gr.sparse(in[0]);
        const SparseVoxelTensor& bv2 = gr.sparse(in[1]);
        const double gs = std::get<DenseTensor>(upstream).scalar_value();
        FeatureMatrix ga = FeatureMatrix::Zero(av2.features.rows(), av2.features.cols());
        FeatureMatrix gb = FeatureMatrix::Zero(bv2.features.rows(), bv2.features.cols());
        const double coef = -gs / m;
        for (std::size_t i = 0; i < stats->rows.size(); ++i) {
            const int r = stats->rows[i];
            const double na = stats->na[i], nb = stats->nb[i], dot = stats->dot[i];
            const double cosv = dot / (na * nb);
            ga.row(r) = coef * (bv2.features.row(r) / (na * nb) - (cosv / (na * na)) * av2.features.row(r));
            gb.row(r) = coef * (av2.features.row(r) / (na * nb) - (cosv / (nb * nb)) * bv2.features.row(r));
        }
        slots.add_sparse(in[0], ga, av2);
        slots.add_sparse(in[1], gb, bv2);
    };
    return {g.emplace("cosine_consistency", {a, b}, DenseTensor::scalar(loss), std::move(backward)), false};
}

LossResult l1_consistency_loss(Graph& g, NodeId a, NodeId b,
                               std::shared_ptr<const std::vector<std::uint8_t>> mask) {
    const SparseVoxelTensor& av = g.sparse(a);
    const SparseVoxelTensor& bv = g.sparse(b);
    if (av.grid_shape != bv.grid_shape || av.indices != bv.indices || av.channels != bv.channels) {
        throw ConfigError("l1_consistency_loss: operands must share grid, occupancy and channels");
    }
    const std::size_t n = av.indices.size();
    require(!mask || mask->size() == n, "l1_consistency_loss: mask length must equal occupancy");

    auto rows = std::make_shared<std::vector<int>>();
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (mask && !(*mask)[r]) continue;
        rows->push_back(static_cast<int>(r));
        acc += (av.features.row(static_cast<Eigen::Index>(r)) - bv.features.row(static_cast<Eigen::Index>(r)))
                   .cwiseAbs()
                   .sum();
    }
    if (rows->empty() || av.channels == 0) {
        return {g.input(DenseTensor::scalar(0.0)), true};
    }
    const double denom = static_cast<double>(rows->size()) * av.channels;
    const double loss = acc / denom;

    auto backward = [rows, denom](const Graph& gr, const std::vector<NodeId>& in, const Value&,
                                  const Value& upstream, GradSlots& slots) {
        const SparseVoxelTensor& av2 = gr.sparse(in[0]);
        const SparseVoxelTensor& bv2 = gr.sparse(in[1]);
        const double gs = std::get<DenseTensor>(upstream).scalar_value() / denom;
        FeatureMatrix ga = FeatureMatrix::Zero(av2.features.rows(), av2.features.cols());
        FeatureMatrix gb = FeatureMatrix::Zero(bv2.features.rows(), bv2.features.cols());
        for (const int r : *rows) {
            for (int c = 0; c < av2.channels; ++c) {
                const double d = av2.features(r, c) - bv2.features(r, c);
                const double s = d > 0.0 ? gs : (d < 0.0 ? -gs : 0.0);
                ga(r, c) = s;
                gb(r, c) = -s;
            }
        }
        slots.add_sparse(in[0], ga, av2);
        slots.add_sparse(in[1], gb, bv2);
    };
    return {g.emplace("l1_consistency", {a, b}, DenseTensor::scalar(loss), std::move(backward)), false};
}

}  // namespace pathcons
