#include "pathcons/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pathcons/sha256.hpp"

namespace pathcons {

namespace {

constexpr char kMagic[9] = "PFDATA01";

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFF));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    double f64() {
        if (at_ + 8 > bytes_.size()) throw ConfigError("sample container truncated");
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes_[at_ + i]) << (8 * i);
        at_ += 8;
        return std::bit_cast<double>(bits);
    }
    std::uint16_t u16() {
        if (at_ + 2 > bytes_.size()) throw ConfigError("sample container truncated");
        const std::uint16_t v = static_cast<std::uint16_t>(bytes_[at_] | (bytes_[at_ + 1] << 8));
        at_ += 2;
        return v;
    }
    void expect_magic() {
        if (at_ + 8 > bytes_.size() || std::memcmp(bytes_.data() + at_, kMagic, 8) != 0) {
            throw ConfigError("bad sample container magic");
        }
        at_ += 8;
    }
    std::size_t remaining() const { return bytes_.size() - at_; }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t at_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_sample(const SceneSample& sample) {
    std::vector<std::uint8_t> out;
    const std::size_t n_labels = sample.voxel_labels.size();
    out.reserve(8 + 8 * (28 + 3 * sample.cloud.points.size() + sample.image.size()) + 2 * n_labels);
    out.insert(out.end(), kMagic, kMagic + 8);
    for (int a = 0; a < 3; ++a) put_f64(out, sample.grid.origin[a]);
    put_f64(out, sample.grid.voxel_size);
    for (int a = 0; a < 3; ++a) put_f64(out, sample.grid.dims[a]);
    put_f64(out, sample.camera.fx);
    put_f64(out, sample.camera.fy);
    put_f64(out, sample.camera.cx);
    put_f64(out, sample.camera.cy);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) put_f64(out, sample.camera.rotation(r, c));
    }
    for (int a = 0; a < 3; ++a) put_f64(out, sample.camera.translation[a]);
    put_f64(out, sample.camera.image_h);
    put_f64(out, sample.camera.image_w);
    put_f64(out, static_cast<double>(sample.cloud.points.size()));
    double max_label = 0.0;
    for (const std::uint16_t l : sample.voxel_labels) max_label = std::max(max_label, static_cast<double>(l));
    put_f64(out, max_label);
    for (const Eigen::Vector3d& p : sample.cloud.points) {
        for (int a = 0; a < 3; ++a) put_f64(out, p[a]);
    }
    for (std::int64_t i = 0; i < sample.image.size(); ++i) put_f64(out, sample.image[i]);
    for (const std::uint16_t l : sample.voxel_labels) put_u16(out, l);
    return out;
}

SceneSample deserialize_sample(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    r.expect_magic();
    SceneSample s;
    for (int a = 0; a < 3; ++a) s.grid.origin[a] = r.f64();
    s.grid.voxel_size = r.f64();
    for (int a = 0; a < 3; ++a) s.grid.dims[a] = static_cast<int>(r.f64());
    s.camera.fx = r.f64();
    s.camera.fy = r.f64();
    s.camera.cx = r.f64();
    s.camera.cy = r.f64();
    for (int row = 0; row < 3; ++row) {
        for (int c = 0; c < 3; ++c) s.camera.rotation(row, c) = r.f64();
    }
    for (int a = 0; a < 3; ++a) s.camera.translation[a] = r.f64();
    s.camera.image_h = static_cast<int>(r.f64());
    s.camera.image_w = static_cast<int>(r.f64());
    const auto n_points = static_cast<std::size_t>(r.f64());
    r.f64();  // n_classes hint
    s.cloud.points.resize(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
        for (int a = 0; a < 3; ++a) s.cloud.points[i][a] = r.f64();
    }
    const std::int64_t n_img = 3LL * s.camera.image_h * s.camera.image_w;
    Eigen::ArrayXd img(n_img);
    for (std::int64_t i = 0; i < n_img; ++i) img[i] = r.f64();
    s.image = DenseTensor({3, s.camera.image_h, s.camera.image_w}, std::move(img));
    const std::int64_t n_labels = static_cast<std::int64_t>(s.grid.dims[0]) * s.grid.dims[1] * s.grid.dims[2];
    s.voxel_labels.resize(n_labels);
    for (std::int64_t i = 0; i < n_labels; ++i) s.voxel_labels[i] = r.u16();
    if (r.remaining() != 0) throw ConfigError("trailing bytes in sample container");
    return s;
}

Dataset build_dataset(const DatasetSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;
    Sha256 hash;
    for (int i = 0; i < spec.n_train + spec.n_val; ++i) {
        SceneSample sample = make_sample(spec, i);
        const std::vector<std::uint8_t> bytes = serialize_sample(sample);
        hash.update(bytes);
        if (i < spec.n_train) {
            ds.train.push_back(std::move(sample));
        } else {
            ds.val.push_back(std::move(sample));
        }
    }
    ds.sha256 = hash.hex_digest();
    return ds;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "samples");
    std::ostringstream index;
    index << "schema_version = 1\n";
    index << "seed = " << dataset.spec.seed << "\n";
    index << "n_train = " << dataset.spec.n_train << "\n";
    index << "n_val = " << dataset.spec.n_val << "\n";
    index << "lidar_points = " << dataset.spec.lidar_points << "\n";
    index << "lidar_noise_sigma = " << dataset.spec.lidar_noise_sigma << "\n";
    index << "color_noise_sigma = " << dataset.spec.color_noise_sigma << "\n";
    index << "n_classes = " << dataset.spec.n_classes << "\n";
    index << "grid_dims = " << dataset.spec.grid.dims[0] << " " << dataset.spec.grid.dims[1] << " "
          << dataset.spec.grid.dims[2] << "\n";
    index << "voxel_size = " << dataset.spec.grid.voxel_size << "\n";
    index << "sha256 = " << dataset.sha256 << "\n";

    auto write_one = [&](const SceneSample& sample, int index_no, const char* split) {
        char name[64];
        std::snprintf(name, sizeof(name), "samples/%s_%05d.bin", split, index_no);
        const std::vector<std::uint8_t> bytes = serialize_sample(sample);
        std::ofstream out(dir / name, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw UsageError("failed to write " + (dir / name).string());
        index << "sample." << split << "." << index_no << " = " << name << "\n";
    };
    for (std::size_t i = 0; i < dataset.train.size(); ++i) write_one(dataset.train[i], static_cast<int>(i), "train");
    for (std::size_t i = 0; i < dataset.val.size(); ++i) write_one(dataset.val[i], static_cast<int>(i), "val");

    std::ofstream out(dir / "index.txt");
    out << index.str();
    if (!out) throw UsageError("failed to write dataset index");
}

}  // namespace pathcons
