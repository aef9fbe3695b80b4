// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint container. Layout (all integers little-endian):
//
//   "MORK"  u32 version
//   u64 tensor count, then per tensor:
//       u32 name length, name bytes, u32 rank, u64 dims[rank], f64 values (row-major)
//   u64 optimizer count, then per optimizer:
//       u32 name length, name bytes, u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps,
//       u64 rows, u64 cols, f64 m[rows*cols], f64 v[rows*cols]
//   u64 rng state
//   u64 config length, config bytes (UTF-8 key=value text)
//
// Entries are kept in insertion order, so writing the same state twice yields
// identical bytes.

#pragma once

#include "mor/numeric.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace mor {

inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Checkpoint {
    std::vector<std::pair<std::string, Matrix>> tensors;
    std::vector<std::pair<std::string, AdamState>> optimizers;
    std::uint64_t rng_state = 0;
    std::string config;

    void add_tensor(const std::string &name, const Matrix &m) {
        if (find_tensor(name))
            throw std::invalid_argument("checkpoint: duplicate tensor '" + name + "'");
        tensors.emplace_back(name, m);
    }
    void add_optimizer(const std::string &name, const AdamState &s) {
        for (const auto &[n, _] : optimizers)
            if (n == name)
                throw std::invalid_argument("checkpoint: duplicate optimizer '" + name + "'");
        optimizers.emplace_back(name, s);
    }

    const Matrix *find_tensor(const std::string &name) const {
        for (const auto &[n, m] : tensors)
            if (n == name)
                return &m;
        return nullptr;
    }
    const Matrix &tensor(const std::string &name) const {
        if (const Matrix *m = find_tensor(name))
            return *m;
        throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    }
    const AdamState &optimizer(const std::string &name) const {
        for (const auto &[n, s] : optimizers)
            if (n == name)
                return s;
        throw std::runtime_error("checkpoint: missing optimizer state '" + name + "'");
    }

    bool operator==(const Checkpoint &) const = default;
};

namespace detail {

class ByteWriter {
public:
    template <typename T> void put(T v) {
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        bytes_.append(buf, sizeof(T));
    }
    void put_string32(const std::string &s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        bytes_ += s;
    }
    void put_doubles(const std::vector<double> &v) {
        for (double d : v)
            put<double>(d);
    }
    std::string &bytes() noexcept { return bytes_; }

private:
    std::string bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}
    template <typename T> T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_string(std::size_t n) {
        need(n);
        std::string s(bytes_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    std::vector<double> get_doubles(std::size_t n) {
        if (n > (bytes_.size() - pos_) / sizeof(double))
            throw std::runtime_error("checkpoint: truncated tensor data");
        std::vector<double> v(n);
        for (double &d : v)
            d = get<double>();
        return v;
    }
    bool done() const noexcept { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n)
            throw std::runtime_error("checkpoint: unexpected end of data");
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::string serialize_checkpoint(const Checkpoint &ck) {
    detail::ByteWriter w;
    w.bytes() += "MORK";
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint64_t>(ck.tensors.size());
    for (const auto &[name, m] : ck.tensors) {
        w.put_string32(name);
        w.put<std::uint32_t>(2);
        w.put<std::uint64_t>(m.rows());
        w.put<std::uint64_t>(m.cols());
        w.put_doubles(m.data());
    }
    w.put<std::uint64_t>(ck.optimizers.size());
    for (const auto &[name, s] : ck.optimizers) {
        w.put_string32(name);
        w.put<std::uint64_t>(s.step);
        w.put<double>(s.lr);
        w.put<double>(s.beta1);
        w.put<double>(s.beta2);
        w.put<double>(s.eps);
        w.put<std::uint64_t>(s.m.rows());
        w.put<std::uint64_t>(s.m.cols());
        w.put_doubles(s.m.data());
        w.put_doubles(s.v.data());
    }
    w.put<std::uint64_t>(ck.rng_state);
    w.put<std::uint64_t>(ck.config.size());
    w.bytes() += ck.config;
    return std::move(w.bytes());
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
    detail::ByteReader r(bytes);
    if (r.get_string(4) != "MORK")
        throw std::runtime_error("checkpoint: bad magic (not a MORK file)");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
    Checkpoint ck;
    const auto nt = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < nt; ++i) {
        std::string name = r.get_string(r.get<std::uint32_t>());
        const auto rank = r.get<std::uint32_t>();
        if (rank != 2)
            throw std::runtime_error("checkpoint: tensor '" + name + "' has unsupported rank " + std::to_string(rank));
        const auto rows = r.get<std::uint64_t>();
        const auto cols = r.get<std::uint64_t>();
        if (cols != 0 && rows > std::numeric_limits<std::uint64_t>::max() / cols)
            throw std::runtime_error("checkpoint: tensor '" + name + "' has absurd shape");
        ck.add_tensor(name, Matrix(rows, cols, r.get_doubles(rows * cols)));
    }
    const auto no = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < no; ++i) {
        std::string name = r.get_string(r.get<std::uint32_t>());
        AdamState s;
        s.step = r.get<std::uint64_t>();
        s.lr = r.get<double>();
        s.beta1 = r.get<double>();
        s.beta2 = r.get<double>();
        s.eps = r.get<double>();
        const auto rows = r.get<std::uint64_t>();
        const auto cols = r.get<std::uint64_t>();
        s.m = Matrix(rows, cols, r.get_doubles(rows * cols));
        s.v = Matrix(rows, cols, r.get_doubles(rows * cols));
        ck.add_optimizer(name, s);
    }
    ck.rng_state = r.get<std::uint64_t>();
    ck.config = r.get_string(r.get<std::uint64_t>());
    if (!r.done())
        throw std::runtime_error("checkpoint: trailing bytes after config block");
    return ck;
}

inline void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ck) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write checkpoint " + path.string());
    const std::string bytes = serialize_checkpoint(ck);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw std::runtime_error("error writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open checkpoint " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return deserialize_checkpoint(ss.str());
    } catch (const std::runtime_error &e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

} // namespace mor
