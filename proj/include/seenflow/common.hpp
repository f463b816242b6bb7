// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/LU>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace seenflow {

using Vec3i = Eigen::Vector3i;
using Vec3d = Eigen::Vector3d;
using Vec3f = Eigen::Vector3f;
using Mat3d = Eigen::Matrix3d;

struct Aabb {
    Vec3d min = Vec3d::Zero();
    Vec3d max = Vec3d::Zero();

    bool contains(const Vec3d& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
    // Closed-interval overlap: shared boundary planes count as intersecting.
    bool intersects(const Aabb& o) const {
        return (min.array() <= o.max.array()).all() && (o.min.array() <= max.array()).all();
    }
    Vec3d extent() const { return max - min; }
};

struct Vec3iLess {
    bool operator()(const Vec3i& a, const Vec3i& b) const {
        if (a.x() != b.x()) return a.x() < b.x();
        if (a.y() != b.y()) return a.y() < b.y();
        return a.z() < b.z();
    }
};

inline int floor_div(int a, int b) {
    int q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

// ---------------------------------------------------------------------------
// Deterministic RNG. splitmix64 core so that sequences are identical across
// platforms and standard-library versions (std distributions are not).
// ---------------------------------------------------------------------------
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive bounds.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (hi < lo) throw std::invalid_argument("uniform_int: hi < lo");
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    // Box-Muller, one draw per call (the sine half is discarded).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(2.0 * M_PI * u2);
    }

    // Derive an independent stream for a labeled sub-task.
    Rng fork(std::uint64_t salt) { return Rng(next_u64() ^ (salt * 0x9E3779B97F4A7C15ull)); }

private:
    std::uint64_t state_;
};

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Little-endian binary IO.
// ---------------------------------------------------------------------------
namespace io {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("unexpected end of file");
    return v;
}

template <typename T>
void write_array(std::ostream& os, const T* data, std::size_t count) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
}

template <typename T>
void read_array(std::istream& is, T* data, std::size_t count) {
    is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
    if (!is) throw std::runtime_error("unexpected end of file");
}

inline void write_magic(std::ostream& os, const char magic[4]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char magic[4], const std::string& what) {
    char buf[4];
    is.read(buf, 4);
    if (!is || std::memcmp(buf, magic, 4) != 0)
        throw std::runtime_error("bad magic in " + what + " file");
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    return is;
}

}  // namespace io

// ---------------------------------------------------------------------------
// Logging, level from SEENFLOW_LOG (error|warn|info|debug), default info.
// ---------------------------------------------------------------------------
enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

inline LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("SEENFLOW_LOG");
        if (!env) return LogLevel::kInfo;
        std::string s(env);
        if (s == "error") return LogLevel::kError;
        if (s == "warn") return LogLevel::kWarn;
        if (s == "debug") return LogLevel::kDebug;
        return LogLevel::kInfo;
    }();
    return level;
}

template <typename... Args>
void log_at(LogLevel lvl, const char* fmt, Args... args) {
    if (lvl > log_level()) return;
    std::fprintf(stderr, fmt, args...);
    std::fprintf(stderr, "\n");
}

template <typename... Args>
void log_info(const char* fmt, Args... args) {
    log_at(LogLevel::kInfo, fmt, args...);
}
template <typename... Args>
void log_debug(const char* fmt, Args... args) {
    log_at(LogLevel::kDebug, fmt, args...);
}
template <typename... Args>
void log_warn(const char* fmt, Args... args) {
    log_at(LogLevel::kWarn, fmt, args...);
}

}  // namespace seenflow
