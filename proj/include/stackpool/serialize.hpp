#pragma once

// Binary tensor format ("PSTN"), all integers and values little-endian:
//
//   magic   4 bytes  "PSTN"
//   version u32      1
//   dtype   u32      1 = float64, 2 = float32
//   rank    u32
//   extents u64 x rank
//   values  dtype x product(extents)
//
// Checkpoint container ("PSCK"):
//
//   magic    4 bytes "PSCK"
//   version  u32     1
//   manifest u64 length + UTF-8 JSON bytes
//   count    u32
//   toc      count x { u32 name length, name bytes, u64 offset, u64 size }
//   payload  PSTN blobs; offsets are absolute file offsets

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <type_traits>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace stackpool {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class DType : std::uint32_t { f64 = 1, f32 = 2 };

template <typename T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, double> || std::is_same_v<T, float>, "tensors hold float or double");
    return std::is_same_v<T, double> ? DType::f64 : DType::f32;
}

namespace detail {

template <typename U>
void put_le(std::string& buf, U value) {
    using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
    auto bits = std::bit_cast<Bits>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const unsigned char* p) {
    using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<Bits>(p[i]) << (8 * i);
    return std::bit_cast<U>(bits);
}

class ByteReader {
public:
    ByteReader(const std::string& bytes, std::size_t pos = 0) : bytes_(bytes), pos_(pos) {}

    template <typename U>
    U read() {
        need(sizeof(U));
        U v = get_le<U>(reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_);
        pos_ += sizeof(U);
        return v;
    }
    std::string read_bytes(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw FormatError("truncated input");
    }
    const std::string& bytes_;
    std::size_t pos_;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed: " + path);
}

}  // namespace detail

template <typename T>
std::string encode_tensor(const Tensor<T>& t) {
    std::string buf = "PSTN";
    detail::put_le<std::uint32_t>(buf, 1);
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(dtype_of<T>()));
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) detail::put_le<std::uint64_t>(buf, e);
    buf.reserve(buf.size() + t.size() * sizeof(T));
    for (T v : t.data()) detail::put_le<T>(buf, v);
    return buf;
}

/// Decodes a PSTN blob starting at reader's position.  Values stored in the
/// other precision are converted.
template <typename T>
Tensor<T> decode_tensor(detail::ByteReader& r) {
    if (r.read_bytes(4) != "PSTN") throw FormatError("bad tensor magic");
    if (auto v = r.read<std::uint32_t>(); v != 1) throw FormatError("unsupported tensor version " + std::to_string(v));
    auto dtype = static_cast<DType>(r.read<std::uint32_t>());
    if (dtype != DType::f64 && dtype != DType::f32) throw FormatError("unknown dtype code");
    auto rank = r.read<std::uint32_t>();
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.read<std::uint64_t>());
    check_extents(shape);
    std::vector<T> values(numel(shape));
    for (auto& v : values) v = dtype == DType::f64 ? static_cast<T>(r.read<double>()) : static_cast<T>(r.read<float>());
    return Tensor<T>::from(std::move(shape), std::move(values));
}

template <typename T>
Tensor<T> decode_tensor(const std::string& bytes) {
    detail::ByteReader r(bytes);
    return decode_tensor<T>(r);
}

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
    detail::write_file(path, encode_tensor(t));
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
    return decode_tensor<T>(detail::read_file(path));
}

template <typename T>
struct Container {
    std::string manifest;  // JSON text
    std::vector<std::pair<std::string, Tensor<T>>> tensors;

    const Tensor<T>& at(const std::string& name) const {
        for (auto& [n, t] : tensors)
            if (n == name) return t;
        throw FormatError("container has no tensor named '" + name + "'");
    }
};

template <typename T>
std::string encode_container(const Container<T>& c) {
    std::vector<std::string> blobs;
    for (auto& [name, t] : c.tensors) blobs.push_back(encode_tensor(t));

    std::size_t header = 4 + 4 + 8 + c.manifest.size() + 4;
    for (auto& [name, t] : c.tensors) header += 4 + name.size() + 8 + 8;

    std::string buf = "PSCK";
    detail::put_le<std::uint32_t>(buf, 1);
    detail::put_le<std::uint64_t>(buf, c.manifest.size());
    buf += c.manifest;
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(c.tensors.size()));
    std::uint64_t offset = header;
    for (std::size_t i = 0; i < blobs.size(); ++i) {
        const auto& name = c.tensors[i].first;
        detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
        buf += name;
        detail::put_le<std::uint64_t>(buf, offset);
        detail::put_le<std::uint64_t>(buf, blobs[i].size());
        offset += blobs[i].size();
    }
    for (auto& b : blobs) buf += b;
    return buf;
}

template <typename T>
Container<T> decode_container(const std::string& bytes) {
    detail::ByteReader r(bytes);
    if (r.read_bytes(4) != "PSCK") throw FormatError("bad checkpoint magic");
    if (auto v = r.read<std::uint32_t>(); v != 1) throw FormatError("unsupported checkpoint version " + std::to_string(v));
    Container<T> c;
    c.manifest = r.read_bytes(static_cast<std::size_t>(r.read<std::uint64_t>()));
    auto count = r.read<std::uint32_t>();
    std::vector<std::tuple<std::string, std::uint64_t, std::uint64_t>> toc;
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name = r.read_bytes(r.read<std::uint32_t>());
        auto off = r.read<std::uint64_t>();
        auto size = r.read<std::uint64_t>();
        toc.emplace_back(std::move(name), off, size);
    }
    for (auto& [name, off, size] : toc) {
        if (off + size > bytes.size()) throw FormatError("tensor '" + name + "' extends past end of file");
        detail::ByteReader tr(bytes, static_cast<std::size_t>(off));
        c.tensors.emplace_back(name, decode_tensor<T>(tr));
        if (tr.pos() != off + size) throw FormatError("tensor '" + name + "' size mismatch in table of contents");
    }
    return c;
}

}  // namespace stackpool
