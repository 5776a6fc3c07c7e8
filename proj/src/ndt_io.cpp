#include "anima/ndt_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "anima/errors.hpp"

namespace anima::inline ANIMA_NS::ndt {

namespace {

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

std::vector<unsigned char> encode(const NdTensor& t) {
    if (t.rank() > 255) throw ShapeError("NDT1 supports rank <= 255");
    std::vector<unsigned char> out;
    out.reserve(6 + 8 * t.rank() + 4 * t.size());
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    out.push_back(kDtypeF32);
    out.push_back(static_cast<unsigned char>(t.rank()));
    for (auto d : t.dims()) put_u64(out, d);
    for (const float f : t.data()) {
        const auto bits = std::bit_cast<std::uint32_t>(f);
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
    }
    return out;
}

NdTensor decode(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("not an NDT1 stream");
    if (bytes[4] != kDtypeF32) throw IoError("unsupported NDT1 dtype code " + std::to_string(bytes[4]));
    const std::size_t rank = bytes[5];
    if (rank == 0) throw IoError("NDT1 rank must be >= 1");
    if (bytes.size() < 6 + 8 * rank) throw IoError("truncated NDT1 header");
    NdTensor::Dims dims(rank);
    std::size_t count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        dims[i] = static_cast<std::size_t>(get_u64(bytes.data() + 6 + 8 * i));
        if (dims[i] == 0) throw IoError("NDT1 zero dim");
        count *= dims[i];
    }
    const std::size_t offset = 6 + 8 * rank;
    if (bytes.size() != offset + 4 * count) throw IoError("NDT1 payload size mismatch");
    std::vector<Scalar> data(count);
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* p = bytes.data() + offset + 4 * i;
        const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
                                   static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
        data[i] = std::bit_cast<float>(bits);
    }
    return NdTensor(std::move(dims), std::move(data));
}

void save(const NdTensor& t, const std::filesystem::path& path) {
    auto bytes = encode(t);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed: " + path.string());
}

NdTensor load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode(bytes);
}

}  // namespace anima::ndt
