#include "vsmk/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace vsmk::ckpt {

namespace {

constexpr char kMagic[4] = {'V', 'S', 'M', 'K'};

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

}  // namespace

void write_raw(const std::filesystem::path& path, const std::string& settings_text,
               const std::vector<RawEntry>& entries) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot open for writing: " + path.string());
    out.write(kMagic, 4);
    put_u32(out, kFormatVersion);
    put_u64(out, settings_text.size());
    out.write(settings_text.data(), std::streamsize(settings_text.size()));
    put_u64(out, entries.size());
    for (const auto& e : entries) {
        put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out.write(e.name.data(), std::streamsize(e.name.size()));
        out.put(static_cast<char>(e.dtype));
        out.put(static_cast<char>(e.dims.size()));
        for (std::uint64_t d : e.dims) put_u64(out, d);
        out.write(reinterpret_cast<const char*>(e.payload.data()),
                  std::streamsize(e.payload.size()));
    }
    if (!out) throw DataError("checkpoint: write failed: " + path.string());
}

std::pair<std::string, std::vector<RawEntry>> read_raw(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open: " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("checkpoint: bad magic (not a checkpoint file): " + path.string());
    const std::uint32_t version = get_u32(in);
    if (version != kFormatVersion)
        throw DataError("checkpoint: unsupported format version " + std::to_string(version));
    const std::uint64_t cfg_len = get_u64(in);
    std::string settings_text(cfg_len, '\0');
    if (cfg_len && !in.read(settings_text.data(), std::streamsize(cfg_len)))
        throw DataError("checkpoint: truncated settings block");
    const std::uint64_t n_entries = get_u64(in);
    std::vector<RawEntry> entries;
    entries.reserve(n_entries);
    for (std::uint64_t i = 0; i < n_entries; ++i) {
        RawEntry e;
        const std::uint32_t name_len = get_u32(in);
        e.name.resize(name_len);
        if (!in.read(e.name.data(), name_len)) throw DataError("checkpoint: truncated name");
        const int dtype = in.get();
        const int rank = in.get();
        if (dtype < 0 || rank < 0) throw DataError("checkpoint: truncated entry header");
        if (dtype > 1)
            throw DataError("checkpoint: unknown dtype code " + std::to_string(dtype));
        e.dtype = static_cast<Dtype>(dtype);
        std::uint64_t count = 1;
        for (int d = 0; d < rank; ++d) {
            e.dims.push_back(get_u64(in));
            count *= e.dims.back();
        }
        const std::size_t scalar = e.dtype == Dtype::F32 ? 4 : 8;
        e.payload.resize(count * scalar);
        if (count && !in.read(reinterpret_cast<char*>(e.payload.data()),
                              std::streamsize(e.payload.size())))
            throw DataError("checkpoint: truncated payload for '" + e.name + "'");
        entries.push_back(std::move(e));
    }
    return {std::move(settings_text), std::move(entries)};
}

}  // namespace vsmk::ckpt
