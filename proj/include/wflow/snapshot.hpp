#pragma once

// Snapshot export shared by the particle and grid solvers: CSV for small
// outputs, a little-endian f64 binary format (header: N, n, t) for large ones.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "wflow/fokker_planck.hpp"
#include "wflow/linalg.hpp"

namespace wflow {

class IoError : public std::runtime_error {
  public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void write_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void write_f64(std::ostream& os, double v) {
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    __builtin_memcpy(&bits, &v, 8);
    write_u64(os, bits);
}

inline double read_f64(std::istream& is) {
    const uint64_t bits = read_u64(is);
    double v;
    __builtin_memcpy(&v, &bits, 8);
    return v;
}

}  // namespace detail

struct BinarySnapshot {
    uint64_t count = 0;  // N particles or nodes
    uint64_t dim = 1;
    double time = 0;
    std::vector<double> data;  // count * dim values, row-major
};

inline constexpr uint64_t kSnapshotMagic = 0x77666c6f77736e70ull;  // "wflowsnp"

inline void write_binary_snapshot(const std::string& path,
                                  const BinarySnapshot& snap) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    detail::write_u64(os, kSnapshotMagic);
    detail::write_u64(os, snap.count);
    detail::write_u64(os, snap.dim);
    detail::write_f64(os, snap.time);
    for (double v : snap.data) detail::write_f64(os, v);
    if (!os) throw IoError("short write to '" + path + "'");
}

inline BinarySnapshot read_binary_snapshot(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    if (detail::read_u64(is) != kSnapshotMagic)
        throw IoError("'" + path + "' is not a wflow snapshot");
    BinarySnapshot snap;
    snap.count = detail::read_u64(is);
    snap.dim = detail::read_u64(is);
    snap.time = detail::read_f64(is);
    snap.data.resize(snap.count * snap.dim);
    for (auto& v : snap.data) v = detail::read_f64(is);
    if (!is) throw IoError("truncated snapshot '" + path + "'");
    return snap;
}

inline void write_density_csv(const std::string& path, const DensityField& d) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.precision(17);
    os << (d.grid.dim == 1 ? "x1,value\n" : "x1,x2,value\n");
    for (int i = 0; i < d.grid.nx; ++i)
        for (int j = 0; j < d.grid.ny; ++j) {
            const Vec x = d.grid.node(i, j);
            os << x[0];
            if (d.grid.dim == 2) os << "," << x[1];
            os << "," << d.values[d.grid.index(i, j)] << "\n";
        }
}

inline BinarySnapshot density_snapshot(const DensityField& d) {
    BinarySnapshot snap;
    snap.count = static_cast<uint64_t>(d.grid.size());
    snap.dim = 1;
    snap.time = d.time;
    snap.data = d.values;
    return snap;
}

}  // namespace wflow
