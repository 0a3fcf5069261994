#include "adhdnet/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace adhdnet {
namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char bytes[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

bool get_u32(std::istream& in, std::uint32_t& v) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) return false;
    v = std::uint32_t(bytes[0]) | std::uint32_t(bytes[1]) << 8 | std::uint32_t(bytes[2]) << 16 |
        std::uint32_t(bytes[3]) << 24;
    return true;
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > 0xffffffffULL) throw FormatError(std::string("weights: ") + what + " exceeds u32 range");
    return static_cast<std::uint32_t>(v);
}

}  // namespace

void write_weights(std::ostream& out, std::span<const NamedTensor> tensors) {
    out.write(kWeightsMagic, 4);
    put_u32(out, kWeightsVersion);
    for (const auto& [name, tensor] : tensors) {
        put_u32(out, checked_u32(name.size(), "name length"));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, checked_u32(tensor.rank(), "rank"));
        for (auto d : tensor.shape()) put_u32(out, checked_u32(d, "dimension"));
        for (float v : tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    if (!out) throw FormatError("weights: write failed");
}

std::vector<NamedTensor> read_weights(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kWeightsMagic, 4) != 0)
        throw FormatError("weights: missing ADNW magic");
    std::uint32_t version = 0;
    if (!get_u32(in, version)) throw FormatError("weights: truncated header");
    if (version != kWeightsVersion) throw FormatError("weights: unsupported version " + std::to_string(version));

    std::vector<NamedTensor> tensors;
    std::uint32_t name_len = 0;
    while (get_u32(in, name_len)) {
        std::string name(name_len, '\0');
        std::uint32_t rank = 0;
        if (!in.read(name.data(), name_len) || !get_u32(in, rank)) throw FormatError("weights: truncated record");
        Shape shape(rank);
        for (auto& d : shape) {
            std::uint32_t v = 0;
            if (!get_u32(in, v)) throw FormatError("weights: truncated dims for '" + name + "'");
            d = v;
        }
        std::vector<float> values(shape_numel(shape));
        for (auto& v : values) {
            std::uint32_t bits = 0;
            if (!get_u32(in, bits)) throw FormatError("weights: truncated data for '" + name + "'");
            v = std::bit_cast<float>(bits);
        }
        tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
    }
    return tensors;
}

void save_weights(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
    std::ostringstream buffer(std::ios::binary);
    write_weights(buffer, tensors);
    write_file_atomic(path, buffer.str());
}

std::vector<NamedTensor> load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("weights: cannot open " + path.string());
    return read_weights(in);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out.flush()) throw FormatError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace adhdnet
