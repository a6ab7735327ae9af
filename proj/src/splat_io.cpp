#include "cosy/splat_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cosy/error.hpp"

static_assert(std::endian::native == std::endian::little, "splat files are little-endian");

namespace cosy {

namespace {

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(const std::string& in, std::size_t off) {
    std::uint32_t v;
    std::memcpy(&v, in.data() + off, 4);
    return v;
}

void append_block(std::string& out, const GaussianSet& set) {
    out.append(kSplatMagic, 4);
    put_u32(out, kSplatVersion);
    put_u32(out, static_cast<std::uint32_t>(set.size()));
    put_u32(out, static_cast<std::uint32_t>(set.tag));
    const auto data = set.packed();
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
}

}  // namespace

std::string encode_splat(const GaussianSet& set) {
    std::string out;
    append_block(out, set);
    return out;
}

std::string encode_splat(const ComposedScene& scene) {
    std::string out;
    for (const auto& s : scene.sets) append_block(out, s);
    return out;
}

std::vector<GaussianSet> decode_splat(const std::string& bytes) {
    std::vector<GaussianSet> sets;
    std::size_t off = 0;
    while (off < bytes.size()) {
        if (bytes.size() - off < 16) throw Error(ErrorCode::FormatError, "truncated splat header");
        if (std::memcmp(bytes.data() + off, kSplatMagic, 4) != 0) {
            throw Error(ErrorCode::FormatError, "bad splat magic");
        }
        const auto version = get_u32(bytes, off + 4);
        if (version != kSplatVersion) {
            throw Error(ErrorCode::FormatError, "unsupported splat version " + std::to_string(version));
        }
        const auto count = get_u32(bytes, off + 8);
        const auto tag = get_u32(bytes, off + 12);
        if (tag >= static_cast<std::uint32_t>(kNumComponents)) {
            throw Error(ErrorCode::FormatError, "bad component tag");
        }
        off += 16;
        const std::size_t nbytes = std::size_t(count) * kPrimitiveFloats * sizeof(float);
        if (bytes.size() - off < nbytes) throw Error(ErrorCode::FormatError, "truncated splat records");
        std::vector<float> data(std::size_t(count) * kPrimitiveFloats);
        std::memcpy(data.data(), bytes.data() + off, nbytes);
        off += nbytes;
        sets.push_back(GaussianSet::from_packed(static_cast<Component>(tag), data));
    }
    return sets;
}

ComposedScene decode_scene(const std::string& bytes, bool glasses_active) {
    auto sets = decode_splat(bytes);
    if (sets.size() != 4) throw Error(ErrorCode::FormatError, "scene file must hold four component blocks");
    ComposedScene scene;
    scene.glasses_active = glasses_active;
    for (int i = 0; i < kNumComponents; ++i) {
        if (sets[i].tag != kComponents[i]) throw Error(ErrorCode::FormatError, "component blocks out of order");
        scene.sets[i] = std::move(sets[i]);
    }
    return scene;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::DataError, "cannot write " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::DataError, "cannot read " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace cosy
