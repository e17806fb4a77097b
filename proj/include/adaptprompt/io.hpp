// SPDX-License-Identifier: Apache-2.0
//
// File helpers: whole-file reads, atomic writes, and the tensor container
// format ("APWT") used for backbone weights and trained adaptation state.
//
// Container layout, little-endian:
//   "APWT" | u32 version | u32 tensor count
//   per tensor: u16 name length | UTF-8 name | u8 rank | u32 extent * rank | f32 value * size
//   u32 CRC32 over every byte after the magic and before the footer

#ifndef ADAPTPROMPT_IO_HPP
#define ADAPTPROMPT_IO_HPP

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "adaptprompt/tensor.hpp"

namespace adaptprompt {

namespace fs = std::filesystem;

inline std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::string read_file_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Writes to a sibling temporary file and renames it over `path`.
inline void write_file_atomic(const fs::path& path, std::string_view contents) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot write '" + tmp.string() + "'");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw FormatError("short write to '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

inline void write_file_atomic(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

inline std::uint32_t crc32_bytes(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks
    std::size_t off = 0;
    while (off < bytes.size()) {
        const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
        crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
        off += n;
    }
    return static_cast<std::uint32_t>(crc);
}

struct NamedTensor {
    std::string name;
    Tensor value;
};

inline constexpr char kContainerMagic[4] = {'A', 'P', 'W', 'T'};
inline constexpr std::uint32_t kContainerVersion = 1;

namespace detail {

class ByteWriter {
  public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    std::vector<std::uint8_t>& buffer() { return buf_; }

  private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
  public:
    ByteReader(std::span<const std::uint8_t> data, std::size_t pos) : data_(data), pos_(pos) {}

    std::uint8_t u8() { return need(1), data_[pos_++]; }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t position() const { return pos_; }

  private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) {
            throw FormatError("tensor container truncated at byte " + std::to_string(pos_));
        }
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_;
};

}  // namespace detail

/// Values are narrowed to IEEE-754 single precision.
inline std::vector<std::uint8_t> encode_container(const std::vector<NamedTensor>& tensors) {
    detail::ByteWriter w;
    w.bytes(std::string_view(kContainerMagic, 4));
    w.u32(kContainerVersion);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff) throw FormatError("tensor name too long: " + name.substr(0, 32));
        if (t.rank() > 0xff) throw FormatError("tensor rank too large: " + name);
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name);
        w.u8(static_cast<std::uint8_t>(t.rank()));
        for (std::size_t e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
        for (double v : t.data()) w.f32(static_cast<float>(v));
    }
    auto& buf = w.buffer();
    const std::uint32_t crc = crc32_bytes(std::span<const std::uint8_t>(buf).subspan(4));
    w.u32(crc);
    return std::move(buf);
}

inline std::vector<NamedTensor> decode_container(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kContainerMagic, 4) != 0) {
        throw FormatError("bad magic: not an APWT tensor container");
    }
    if (bytes.size() < 4 + 4 + 4 + 4) throw FormatError("tensor container truncated: " + std::to_string(bytes.size()) + " bytes");
    const std::size_t payload_end = bytes.size() - 4;
    detail::ByteReader footer(bytes, payload_end);
    const std::uint32_t stored = footer.u32();
    const std::uint32_t computed = crc32_bytes(bytes.subspan(4, payload_end - 4));
    if (stored != computed) {
        std::ostringstream os;
        os << "CRC32 mismatch over payload bytes [4, " << payload_end << "): stored 0x" << std::hex << stored
           << ", computed 0x" << computed;
        throw FormatError(os.str());
    }

    detail::ByteReader r(bytes.first(payload_end), 4);
    const std::uint32_t version = r.u32();
    if (version != kContainerVersion) {
        throw FormatError("unsupported container version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32();
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor nt;
        nt.name = r.str(r.u16());
        const std::uint8_t rank = r.u8();
        Shape shape(rank);
        for (auto& e : shape) e = r.u32();
        Tensor t(shape);
        for (double& v : t.data()) v = static_cast<double>(r.f32());
        nt.value = std::move(t);
        out.push_back(std::move(nt));
    }
    if (r.position() != payload_end) {
        throw FormatError("trailing bytes after tensor " + std::to_string(count) + " in container");
    }
    return out;
}

inline void save_container(const fs::path& path, const std::vector<NamedTensor>& tensors) {
    write_file_atomic(path, encode_container(tensors));
}

inline std::vector<NamedTensor> load_container(const fs::path& path) {
    const auto bytes = read_file_bytes(path);
    return decode_container(bytes);
}

inline const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, std::string_view name) {
    for (const auto& nt : tensors)
        if (nt.name == name) return nt.value;
    throw FormatError("missing tensor '" + std::string(name) + "'");
}

inline const Tensor* find_tensor_opt(const std::vector<NamedTensor>& tensors, std::string_view name) {
    for (const auto& nt : tensors)
        if (nt.name == name) return &nt.value;
    return nullptr;
}

/// Rounds every value to the nearest single-precision float, the on-disk precision.
inline void round_to_f32(Tensor& t) {
    for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

/// FNV-1a over the raw bytes of the values and extents.
inline std::uint64_t content_hash(const std::vector<NamedTensor>& tensors) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [name, t] : tensors) {
        mix(name.data(), name.size());
        for (std::size_t e : t.shape()) {
            const std::uint64_t e64 = e;
            mix(&e64, sizeof e64);
        }
        mix(t.data().data(), t.size() * sizeof(double));
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace adaptprompt

#endif
