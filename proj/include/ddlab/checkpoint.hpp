#pragma once

// "DDLAB1" weight container.
//
//   magic      6 bytes  "DDLAB1"
//   count      u64      number of records
//   record*    u64 name length, name bytes, u64 rank, rank x u64 extents,
//              numel x f32 values
//
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ddlab/errors.hpp"
#include "ddlab/tensor.hpp"

namespace ddlab {

inline constexpr char kCheckpointMagic[] = "DDLAB1";

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

inline std::uint64_t read_u64(std::istream& is, const std::string& path) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw ParseError("truncated file " + path);
    return v;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const std::vector<NamedArray>& records) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os.write(kCheckpointMagic, 6);
    detail::write_u64(os, records.size());
    for (const auto& r : records) {
        if (numel(r.shape) != r.values.size()) throw DimensionError("checkpoint record " + r.name + " has inconsistent size");
        detail::write_u64(os, r.name.size());
        os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        detail::write_u64(os, r.shape.size());
        for (auto e : r.shape) detail::write_u64(os, e);
        os.write(reinterpret_cast<const char*>(r.values.data()), static_cast<std::streamsize>(r.values.size() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("write failed for " + path);
}

inline std::vector<NamedArray> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    char magic[6];
    if (!is.read(magic, 6) || std::memcmp(magic, kCheckpointMagic, 6) != 0)
        throw ParseError(path + " is not a DDLAB1 checkpoint");
    const auto count = detail::read_u64(is, path);
    std::vector<NamedArray> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedArray r;
        const auto len = detail::read_u64(is, path);
        if (len > (1u << 20)) throw ParseError("implausible record name length in " + path);
        r.name.resize(len);
        if (!is.read(r.name.data(), static_cast<std::streamsize>(len))) throw ParseError("truncated file " + path);
        const auto rank = detail::read_u64(is, path);
        if (rank > 16) throw ParseError("implausible rank for " + r.name + " in " + path);
        for (std::uint64_t k = 0; k < rank; ++k) r.shape.push_back(detail::read_u64(is, path));
        r.values.resize(numel(r.shape));
        if (!is.read(reinterpret_cast<char*>(r.values.data()), static_cast<std::streamsize>(r.values.size() * sizeof(float))))
            throw ParseError("truncated values for " + r.name + " in " + path);
        out.push_back(std::move(r));
    }
    return out;
}

template <typename T>
NamedArray to_record(const std::string& name, const Tensor<T>& t) {
    NamedArray r{name, t.shape(), {}};
    r.values.reserve(t.size());
    for (auto v : t.data()) r.values.push_back(static_cast<float>(v));
    return r;
}

template <typename T>
NamedArray to_record(const std::string& name, const Shape& shape, const std::vector<T>& values) {
    NamedArray r{name, shape, {}};
    r.values.reserve(values.size());
    for (auto v : values) r.values.push_back(static_cast<float>(v));
    return r;
}

}  // namespace ddlab
