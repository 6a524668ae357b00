#pragma once

// Binary checkpoint container: magic "VSMK", a format version, the run's
// serialized settings, then a table of named tensors (dtype, rank, dims,
// little-endian payload).  Saving iterates the parameter store in name
// order, so identical parameters always produce identical bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "vsmk/config.hpp"
#include "vsmk/errors.hpp"
#include "vsmk/nn.hpp"
#include "vsmk/tensor.hpp"

namespace vsmk::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

struct RawEntry {
    std::string name;
    Dtype dtype;
    std::vector<std::uint64_t> dims;
    std::vector<unsigned char> payload;  // little-endian scalars
};

// Low-level container I/O (implemented in checkpoint.cpp).
void write_raw(const std::filesystem::path& path, const std::string& settings_text,
               const std::vector<RawEntry>& entries);
std::pair<std::string, std::vector<RawEntry>> read_raw(const std::filesystem::path& path);

namespace detail {

template <typename T>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<float>() {
    return Dtype::F32;
}
template <>
constexpr Dtype dtype_of<double>() {
    return Dtype::F64;
}

template <typename S, typename D>
void cast_scalars(const unsigned char* src, std::size_t n, D* dst) {
    for (std::size_t i = 0; i < n; ++i) {
        S v;
        std::memcpy(&v, src + i * sizeof(S), sizeof(S));
        dst[i] = static_cast<D>(v);
    }
}

}  // namespace detail

template <typename T>
void save(const std::filesystem::path& path, const config::Settings& settings,
          const nn::ParamStore<T>& params) {
    static_assert(std::endian::native == std::endian::little,
                  "checkpoint writer assumes a little-endian host");
    std::vector<RawEntry> entries;
    entries.reserve(params.count());
    for (const auto& [name, t] : params.entries()) {
        RawEntry e;
        e.name = name;
        e.dtype = detail::dtype_of<T>();
        e.dims.assign(t.shape().begin(), t.shape().end());
        e.payload.resize(t.size() * sizeof(T));
        std::memcpy(e.payload.data(), t.data(), e.payload.size());
        entries.push_back(std::move(e));
    }
    write_raw(path, settings.serialize(), entries);
}

// Loads every stored tensor into `params` (casting between float and double
// when the stored precision differs) and returns the embedded settings.
template <typename T>
config::Settings load(const std::filesystem::path& path, nn::ParamStore<T>& params) {
    auto [text, entries] = read_raw(path);
    for (auto& e : entries) {
        typename Tensor<T>::Shape shape(e.dims.begin(), e.dims.end());
        Tensor<T> t(shape);
        const std::size_t n = t.size();
        const std::size_t scalar = e.dtype == Dtype::F32 ? sizeof(float) : sizeof(double);
        if (e.payload.size() != n * scalar)
            throw DataError("checkpoint entry '" + e.name + "': payload size mismatch");
        if (e.dtype == Dtype::F32)
            detail::cast_scalars<float>(e.payload.data(), n, t.data());
        else
            detail::cast_scalars<double>(e.payload.data(), n, t.data());
        params.set(e.name, std::move(t));
    }
    return config::Settings::parse_string(text);
}

}  // namespace vsmk::ckpt
