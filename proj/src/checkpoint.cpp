#include "x3d/checkpoint.hpp"

#include <zlib.h>

#include <limits>

#include "x3d/binary_io.hpp"
#include "x3d/error.hpp"

namespace x3d {
namespace {

std::uint32_t crc32_of(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks to stay within range.
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), static_cast<uInt>(n));
        pos += n;
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string encode_checkpoint(std::span<const Parameter> params) {
    ByteWriter w;
    w.bytes(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        if (p.name.size() > std::numeric_limits<std::uint16_t>::max()) {
            throw FormatError("parameter name too long: " + p.name.substr(0, 32) + "...");
        }
        const auto& v = p.tensor.value();
        if (v.rank() > std::numeric_limits<std::uint8_t>::max()) throw FormatError("rank too large: " + p.name);
        w.u16(static_cast<std::uint16_t>(p.name.size()));
        w.bytes(p.name);
        w.u8(static_cast<std::uint8_t>(v.rank()));
        for (std::size_t e : v.shape()) w.u32(static_cast<std::uint32_t>(e));
        w.f32s(v.data());
    }
    w.u32(crc32_of(w.buffer()));
    return w.take();
}

std::vector<Parameter> decode_checkpoint(std::string_view bytes, const std::string& context) {
    if (bytes.size() < 16) throw FormatError(context + ": truncated file");
    const std::string_view body = bytes.substr(0, bytes.size() - 4);
    ByteReader trailer(bytes.substr(bytes.size() - 4), context);
    ByteReader r(body, context);
    if (r.bytes(4) != kCheckpointMagic) throw FormatError(context + ": bad magic, expected X3DC");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError(context + ": unsupported format version " + std::to_string(version));
    }
    if (trailer.u32() != crc32_of(body)) throw FormatError(context + ": checksum mismatch (corrupt checkpoint)");
    const std::uint32_t count = r.u32();
    std::vector<Parameter> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Parameter p;
        const std::uint16_t len = r.u16();
        p.name = std::string(r.bytes(len));
        const std::uint8_t rank = r.u8();
        Shape shape(rank);
        for (auto& e : shape) {
            e = r.u32();
            if (e == 0) throw FormatError(context + ": zero extent in " + p.name);
        }
        std::vector<float> data(shape_numel(shape));
        r.f32s(data);
        p.tensor = Tensor::leaf(FloatArray(std::move(shape), std::move(data)), true);
        out.push_back(std::move(p));
    }
    if (r.remaining() != 0) throw FormatError(context + ": trailing bytes after last entry");
    return out;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter> params) {
    write_file_atomic(path, encode_checkpoint(params));
}

std::vector<Parameter> load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw MissingCheckpointError("checkpoint not found: " + path.string());
    return decode_checkpoint(read_file(path), path.string());
}

std::vector<Parameter> clone_parameters(std::span<const Parameter> params) {
    std::vector<Parameter> out;
    out.reserve(params.size());
    for (const auto& p : params) {
        out.push_back(Parameter{p.name, Tensor::leaf(p.tensor.value(), true), p.frozen});
    }
    return out;
}

}  // namespace x3d
