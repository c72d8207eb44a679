#include "xis2/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace xis2 {

namespace {

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw IoError("checkpoint " + path + ": truncated file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& out, const std::vector<float>& v) {
    static_assert(sizeof(float) == 4);
    // serialize explicitly little-endian regardless of host order
    for (float f : v) {
        uint32_t u;
        std::memcpy(&u, &f, 4);
        put_u32(out, u);
    }
}

}  // namespace

void write_records(const std::string& path, const char* magic,
                   const std::vector<NamedTensorData>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot write " + path);
    out.write(magic, 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<uint32_t>(records.size()));
    for (const auto& r : records) {
        put_u32(out, static_cast<uint32_t>(r.name.size()));
        out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        put_u32(out, static_cast<uint32_t>(r.shape.size()));
        int64_t n = 1;
        for (int64_t d : r.shape) {
            put_u32(out, static_cast<uint32_t>(d));
            n *= d;
        }
        if (n != static_cast<int64_t>(r.data.size()))
            throw IoError("checkpoint: record " + r.name + " shape/data mismatch");
        put_f32(out, r.data);
    }
    if (!out) throw IoError("checkpoint: write failed for " + path);
}

std::vector<NamedTensorData> read_records(const std::string& path, const char* magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: no such file: " + path);
    char m[4];
    if (!in.read(m, 4)) throw IoError("checkpoint " + path + ": truncated file");
    if (std::memcmp(m, magic, 4) != 0)
        throw IoError("checkpoint " + path + ": bad magic, expected " + std::string(magic, 4) +
                      " got " + std::string(m, 4));
    const uint32_t version = get_u32(in, path);
    if (version != kCheckpointVersion)
        throw IoError("checkpoint " + path + ": unsupported format_version " +
                      std::to_string(version));
    const uint32_t count = get_u32(in, path);
    std::vector<NamedTensorData> records;
    records.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        NamedTensorData r;
        const uint32_t name_len = get_u32(in, path);
        if (name_len > 4096) throw IoError("checkpoint " + path + ": implausible name length");
        r.name.resize(name_len);
        if (!in.read(r.name.data(), name_len))
            throw IoError("checkpoint " + path + ": truncated file");
        const uint32_t rank = get_u32(in, path);
        if (rank > 8) throw IoError("checkpoint " + path + ": implausible rank");
        int64_t n = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            const uint32_t dim = get_u32(in, path);
            if (dim == 0) throw IoError("checkpoint " + path + ": zero dim in " + r.name);
            r.shape.push_back(static_cast<int64_t>(dim));
            n *= dim;
        }
        r.data.resize(static_cast<size_t>(n));
        for (int64_t k = 0; k < n; ++k) {
            const uint32_t u = get_u32(in, path);
            float f;
            std::memcpy(&f, &u, 4);
            r.data[static_cast<size_t>(k)] = f;
        }
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace xis2
