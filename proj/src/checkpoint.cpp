#include "vlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace vlab {

namespace {

constexpr char kMagic[8] = {'V', 'L', 'A', 'B', 'C', 'K', 'P', '\0'};
constexpr char kFooter[8] = {'V', 'L', 'A', 'B', 'E', 'N', 'D', '\0'};

template <typename I>
void write_int(std::ostream& os, I v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(I));
}

void write_str(std::ostream& os, const std::string& s) {
    write_int<uint64_t>(os, s.size());
    os.write(s.data(), std::streamsize(s.size()));
}

template <typename I>
I read_int(std::istream& is) {
    I v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(I)))
        throw CheckpointCorruptError("checkpoint: truncated file");
    return v;
}

std::string read_str(std::istream& is, uint64_t max_len = 1ull << 30) {
    const auto len = read_int<uint64_t>(is);
    if (len > max_len) throw CheckpointCorruptError("checkpoint: implausible string length");
    std::string s(len, '\0');
    if (len && !is.read(s.data(), std::streamsize(len)))
        throw CheckpointCorruptError("checkpoint: truncated file");
    return s;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("checkpoint: cannot open " + path.string() + " for writing");
    os.write(kMagic, sizeof(kMagic));
    write_int<uint32_t>(os, kVersion);
    write_str(os, kind);
    write_str(os, config_json);
    write_int<uint32_t>(os, uint32_t(arrays.size()));
    for (const auto& [name, arr] : arrays) {
        write_str(os, name);
        write_int<uint32_t>(os, uint32_t(arr.shape.size()));
        for (uint64_t e : arr.shape) write_int<uint64_t>(os, e);
        if (arr.numel() != arr.data.size())
            throw CheckpointError("checkpoint: array '" + name + "' shape/data mismatch");
        os.write(reinterpret_cast<const char*>(arr.data.data()),
                 std::streamsize(arr.data.size() * sizeof(float)));
    }
    write_str(os, optimizer_json);
    write_int<uint32_t>(os, uint32_t(rng_streams.size()));
    for (const auto& [name, st] : rng_streams) {
        write_str(os, name);
        write_int<uint64_t>(os, st.key);
        write_int<uint64_t>(os, st.counter);
    }
    os.write(kFooter, sizeof(kFooter));
    if (!os) throw CheckpointError("checkpoint: write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint: cannot open " + path.string());
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CheckpointCorruptError("checkpoint: bad header in " + path.string());
    const auto version = read_int<uint32_t>(is);
    if (version != kVersion)
        throw CheckpointVersionError("checkpoint: unsupported version " +
                                     std::to_string(version) + " in " + path.string());
    Checkpoint ck;
    ck.kind = read_str(is);
    ck.config_json = read_str(is);
    const auto array_count = read_int<uint32_t>(is);
    for (uint32_t a = 0; a < array_count; ++a) {
        std::string name = read_str(is);
        CkptArray arr;
        const auto ndim = read_int<uint32_t>(is);
        if (ndim > 8) throw CheckpointCorruptError("checkpoint: implausible rank");
        arr.shape.resize(ndim);
        for (auto& e : arr.shape) e = read_int<uint64_t>(is);
        const uint64_t numel = arr.numel();
        if (numel > (1ull << 32)) throw CheckpointCorruptError("checkpoint: implausible array size");
        arr.data.resize(numel);
        if (numel &&
            !is.read(reinterpret_cast<char*>(arr.data.data()),
                     std::streamsize(numel * sizeof(float))))
            throw CheckpointCorruptError("checkpoint: truncated array '" + name + "'");
        ck.arrays.emplace(std::move(name), std::move(arr));
    }
    ck.optimizer_json = read_str(is);
    const auto rng_count = read_int<uint32_t>(is);
    for (uint32_t r = 0; r < rng_count; ++r) {
        std::string name = read_str(is);
        RngState st;
        st.key = read_int<uint64_t>(is);
        st.counter = read_int<uint64_t>(is);
        ck.rng_streams.emplace(std::move(name), st);
    }
    char footer[8];
    if (!is.read(footer, sizeof(footer)) || std::memcmp(footer, kFooter, sizeof(kFooter)) != 0)
        throw CheckpointCorruptError("checkpoint: missing footer in " + path.string());
    return ck;
}

const CkptArray& Checkpoint::require(const std::string& name,
                                     const std::vector<uint64_t>& expect_shape) const {
    auto it = arrays.find(name);
    if (it == arrays.end())
        throw CheckpointShapeError("checkpoint: missing array '" + name + "'");
    if (it->second.shape != expect_shape) {
        std::string got = "[", want = "[";
        for (auto e : it->second.shape) got += std::to_string(e) + ",";
        for (auto e : expect_shape) want += std::to_string(e) + ",";
        throw CheckpointShapeError("checkpoint: array '" + name + "' has shape " + got +
                                   "] but expected " + want + "]");
    }
    return it->second;
}

}  // namespace vlab
