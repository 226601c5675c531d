#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "munet/network.hpp"

namespace munet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(os, u);
}

inline float read_f32(std::istream& is) {
    std::uint32_t u = read_u32(is);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

template <typename S>
void write_entry(std::ostream& os, const std::string& name, const Tensor<S>& t) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
    for (std::int64_t i = 0; i < t.size(); ++i) write_f32(os, static_cast<float>(t[i]));
}

template <typename S>
void read_entry_into(std::istream& is, const std::string& name, Tensor<S>& t) {
    const std::uint32_t nlen = read_u32(is);
    std::string got(nlen, '\0');
    is.read(got.data(), nlen);
    if (got != name)
        throw std::runtime_error("checkpoint: expected entry '" + name + "', found '" + got + "'");
    const std::uint32_t ndim = read_u32(is);
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_u32(is));
    if (shape != t.shape())
        throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file " +
                                 shape_str(shape) + " vs model " + shape_str(t.shape()));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<S>(read_f32(is));
}

}  // namespace detail

/// Little-endian container: "MUNC", version, entry count, then per entry
/// name / shape / f32 data. Batch-norm running stats ride along as entries.
template <typename S>
void save_checkpoint(const ModelState<S>& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    os.write("MUNC", 4);
    detail::write_u32(os, kCheckpointVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(m.params.size() + 2 * m.bn.size()));
    for (const auto& p : m.params) detail::write_entry(os, p.name, p.tensor);
    for (const auto& [name, b] : m.bn) {
        detail::write_entry(os, name + ".running_mean", b.running_mean);
        detail::write_entry(os, name + ".running_var", b.running_var);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

/// Loads into an already-built model; names and shapes must match.
template <typename S>
void load_checkpoint(ModelState<S>& m, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open for read: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MUNC", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint32_t version = detail::read_u32(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t count = detail::read_u32(is);
    if (count != m.params.size() + 2 * m.bn.size())
        throw std::runtime_error("checkpoint: entry count mismatch in " + path);
    for (auto& p : m.params) detail::read_entry_into(is, p.name, p.tensor);
    for (auto& [name, b] : m.bn) {
        detail::read_entry_into(is, name + ".running_mean", b.running_mean);
        detail::read_entry_into(is, name + ".running_var", b.running_var);
    }
}

}  // namespace munet
