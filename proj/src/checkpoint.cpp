#include "pathcons/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace pathcons {

namespace {

constexpr char kMagic[9] = "PFCHKPT1";

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

}  // namespace

void write_checkpoint(const Parameters& params, const std::filesystem::path& path) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u64(out, params.values.size());
    for (const auto& [name, tensor] : params.values) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
        for (const int d : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (std::int64_t i = 0; i < tensor.size(); ++i) put_f64(out, tensor[i]);
    }
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw UsageError("failed to write checkpoint " + path.string());
}

Parameters read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw UsageError("missing checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    std::size_t at = 0;
    auto need = [&](std::size_t n) {
        if (at + n > bytes.size()) throw ConfigError("checkpoint truncated");
    };
    need(8);
    if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw ConfigError("bad checkpoint magic");
    at += 8;
    auto get_u32 = [&]() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
        at += 4;
        return v;
    };
    auto get_u64 = [&]() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
        at += 8;
        return v;
    };

    const std::uint64_t count = get_u64();
    Parameters params;
    for (std::uint64_t p = 0; p < count; ++p) {
        const std::uint32_t name_len = get_u32();
        need(name_len);
        std::string name(reinterpret_cast<const char*>(bytes.data() + at), name_len);
        at += name_len;
        const std::uint32_t rank = get_u32();
        std::vector<int> shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(get_u32());
        const std::int64_t n = shape_numel(shape);
        Eigen::ArrayXd data(n);
        for (std::int64_t i = 0; i < n; ++i) data[i] = std::bit_cast<double>(get_u64());
        params.add(name, DenseTensor(std::move(shape), std::move(data)));
    }
    if (at != bytes.size()) throw ConfigError("trailing bytes in checkpoint");
    return params;
}

}  // namespace pathcons
