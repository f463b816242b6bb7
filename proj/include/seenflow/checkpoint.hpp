// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container "CKPT": a manifest of named records (dtype, shape,
// offset) followed by raw little-endian payloads. Parameter sets store their
// values plus optimizer moments and EMA shadows; a free-form text record makes
// model checkpoints self-describing.
#pragma once

#include "seenflow/tensor.hpp"

namespace seenflow {

enum class CkptDtype : std::uint8_t { kF32 = 0, kF64 = 1, kBytes = 2 };

struct CkptRecord {
    CkptDtype dtype = CkptDtype::kBytes;
    Shape shape;
    std::vector<std::uint8_t> payload;
};

class Checkpoint {
public:
    void add_bytes(const std::string& name, const std::string& data) {
        CkptRecord r;
        r.dtype = CkptDtype::kBytes;
        r.shape = {static_cast<int>(data.size())};
        r.payload.assign(data.begin(), data.end());
        insert(name, std::move(r));
    }

    template <typename S>
    void add_array(const std::string& name, const Shape& shape, const ArrayX<S>& data) {
        static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
        CkptRecord r;
        r.dtype = std::is_same_v<S, float> ? CkptDtype::kF32 : CkptDtype::kF64;
        r.shape = shape;
        r.payload.resize(static_cast<std::size_t>(data.size()) * sizeof(S));
        std::memcpy(r.payload.data(), data.data(), r.payload.size());
        insert(name, std::move(r));
    }

    bool has(const std::string& name) const { return records_.count(name) != 0; }

    std::string get_bytes(const std::string& name) const {
        const CkptRecord& r = at(name);
        return std::string(r.payload.begin(), r.payload.end());
    }

    template <typename S>
    ArrayX<S> get_array(const std::string& name) const {
        const CkptRecord& r = at(name);
        if (r.dtype == CkptDtype::kBytes)
            throw std::runtime_error("checkpoint record '" + name + "' is not numeric");
        const std::int64_t n = shape_size(r.shape);
        ArrayX<S> out(n);
        if (r.dtype == CkptDtype::kF32) {
            const float* p = reinterpret_cast<const float*>(r.payload.data());
            for (std::int64_t i = 0; i < n; ++i) out[i] = static_cast<S>(p[i]);
        } else {
            const double* p = reinterpret_cast<const double*>(r.payload.data());
            for (std::int64_t i = 0; i < n; ++i) out[i] = static_cast<S>(p[i]);
        }
        return out;
    }

    const Shape& shape_of(const std::string& name) const { return at(name).shape; }
    const std::map<std::string, CkptRecord>& records() const { return records_; }

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

private:
    void insert(const std::string& name, CkptRecord r) {
        if (!records_.emplace(name, std::move(r)).second)
            throw std::invalid_argument("duplicate checkpoint record: " + name);
    }
    const CkptRecord& at(const std::string& name) const {
        auto it = records_.find(name);
        if (it == records_.end())
            throw std::runtime_error("checkpoint record not found: " + name);
        return it->second;
    }

    std::map<std::string, CkptRecord> records_;
};

inline void Checkpoint::save(const std::string& path) const {
    std::ofstream os = io::open_out(path);
    io::write_magic(os, "CKPT");
    io::write_pod<std::uint32_t>(os, 1u);
    io::write_pod<std::uint64_t>(os, records_.size());
    std::uint64_t offset = 0;
    for (const auto& [name, r] : records_) {
        io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        io::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(r.dtype));
        io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(r.shape.size()));
        for (int d : r.shape) io::write_pod<std::int64_t>(os, d);
        io::write_pod<std::uint64_t>(os, offset);
        io::write_pod<std::uint64_t>(os, r.payload.size());
        offset += r.payload.size();
    }
    io::write_pod<std::uint64_t>(os, offset);
    for (const auto& [name, r] : records_)
        os.write(reinterpret_cast<const char*>(r.payload.data()),
                 static_cast<std::streamsize>(r.payload.size()));
    if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

inline Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream is = io::open_in(path);
    io::expect_magic(is, "CKPT", path);
    std::uint32_t version = io::read_pod<std::uint32_t>(is);
    if (version != 1u) throw std::runtime_error("unsupported checkpoint version in " + path);
    std::uint64_t count = io::read_pod<std::uint64_t>(is);
    struct Pending {
        std::string name;
        CkptRecord record;
        std::uint64_t offset, size;
    };
    std::vector<Pending> pending;
    for (std::uint64_t i = 0; i < count; ++i) {
        Pending p;
        std::uint32_t name_len = io::read_pod<std::uint32_t>(is);
        p.name.resize(name_len);
        is.read(p.name.data(), name_len);
        p.record.dtype = static_cast<CkptDtype>(io::read_pod<std::uint8_t>(is));
        std::uint32_t ndim = io::read_pod<std::uint32_t>(is);
        for (std::uint32_t d = 0; d < ndim; ++d)
            p.record.shape.push_back(static_cast<int>(io::read_pod<std::int64_t>(is)));
        p.offset = io::read_pod<std::uint64_t>(is);
        p.size = io::read_pod<std::uint64_t>(is);
        pending.push_back(std::move(p));
    }
    std::uint64_t payload_len = io::read_pod<std::uint64_t>(is);
    std::vector<std::uint8_t> payload(payload_len);
    if (payload_len > 0) io::read_array(is, payload.data(), payload.size());
    Checkpoint ckpt;
    for (Pending& p : pending) {
        if (p.offset + p.size > payload_len)
            throw std::runtime_error("corrupt checkpoint record in " + path);
        p.record.payload.assign(payload.begin() + static_cast<std::ptrdiff_t>(p.offset),
                                payload.begin() + static_cast<std::ptrdiff_t>(p.offset + p.size));
        ckpt.insert(p.name, std::move(p.record));
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// ParamSet <-> checkpoint, including optimizer and EMA sections.
// ---------------------------------------------------------------------------
template <typename S>
Checkpoint param_set_checkpoint(const ParamSet<S>& ps, const std::string& manifest) {
    Checkpoint ckpt;
    ckpt.add_bytes("manifest", manifest);
    ckpt.add_bytes("meta/step", std::to_string(ps.step_count()));
    for (const auto& [name, e] : ps.entries()) {
        ckpt.add_array<S>("param/" + name, e.tensor.shape(), e.tensor.value());
        ckpt.add_array<S>("adam_m/" + name, e.tensor.shape(), e.m);
        ckpt.add_array<S>("adam_v/" + name, e.tensor.shape(), e.v);
        ckpt.add_array<S>("ema/" + name, e.tensor.shape(), e.ema);
    }
    return ckpt;
}

template <typename S>
void save_param_set(const ParamSet<S>& ps, const std::string& manifest, const std::string& path) {
    param_set_checkpoint(ps, manifest).save(path);
}

// Fill an already-constructed ParamSet; names and shapes must match exactly.
template <typename S>
std::string load_param_set(const Checkpoint& ckpt, ParamSet<S>& ps) {
    for (auto& [name, e] : ps.entries()) {
        const std::string key = "param/" + name;
        if (!ckpt.has(key))
            throw std::runtime_error("checkpoint is missing parameter '" + name +
                                     "'; architecture mismatch?");
        if (ckpt.shape_of(key) != e.tensor.shape())
            throw std::runtime_error("checkpoint shape mismatch for '" + name + "': file has " +
                                     shape_str(ckpt.shape_of(key)) + ", model wants " +
                                     shape_str(e.tensor.shape()));
        e.tensor.mutable_value() = ckpt.get_array<S>(key);
        e.m = ckpt.get_array<S>("adam_m/" + name);
        e.v = ckpt.get_array<S>("adam_v/" + name);
        e.ema = ckpt.get_array<S>("ema/" + name);
    }
    for (const auto& [key, r] : ckpt.records())
        if (key.rfind("param/", 0) == 0 && !ps.has(key.substr(6)))
            throw std::runtime_error("checkpoint has unexpected parameter '" + key.substr(6) +
                                     "'; architecture mismatch?");
    ps.set_step_count(std::stoll(ckpt.get_bytes("meta/step")));
    return ckpt.get_bytes("manifest");
}

}  // namespace seenflow
