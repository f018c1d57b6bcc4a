#pragma once

// Little-endian primitive readers/writers shared by the NDFE/NDFG/NDFM codecs.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ndf/error.hpp"

namespace ndf::io {

static_assert(std::endian::native == std::endian::little,
              "binary codecs assume a little-endian host");

template <typename T>
void write_pod(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void write_array(std::ostream& out, std::span<const T> values) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
}

inline void write_magic(std::ostream& out, std::string_view magic) {
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

/// Reads exactly sizeof(T) bytes or throws CorruptFileError.
template <typename T>
T read_pod(std::istream& in, std::string_view what) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
        throw CorruptFileError("truncated file while reading " + std::string(what));
    }
    return value;
}

template <typename T>
void read_array(std::istream& in, std::span<T> values, std::string_view what) {
    const auto bytes = static_cast<std::streamsize>(values.size_bytes());
    in.read(reinterpret_cast<char*>(values.data()), bytes);
    if (in.gcount() != bytes) {
        throw CorruptFileError("truncated payload while reading " + std::string(what));
    }
}

inline void expect_magic(std::istream& in, std::string_view magic) {
    char buf[4] = {};
    in.read(buf, 4);
    if (in.gcount() != 4 || std::string_view(buf, 4) != magic) {
        throw FormatError("bad magic: expected '" + std::string(magic) + "'");
    }
}

/// True when the stream has no bytes left.
inline bool at_end(std::istream& in) {
    return in.peek() == std::char_traits<char>::eof();
}

} // namespace ndf::io
