#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "deepafl/matrix.hpp"

// Little-endian primitives shared by all on-disk and wire formats.
namespace deepafl::io {

inline void put_bytes(std::string& out, const void* p, size_t n) {
    out.append(static_cast<const char*>(p), n);
}

template <typename T>
void put_le(std::string& out, T value) {
    static_assert(std::is_integral_v<T>);
    auto u = static_cast<std::make_unsigned_t<T>>(value);
    for (size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double value) {
    put_le(out, std::bit_cast<std::uint64_t>(value));
}

inline void put_matrix(std::string& out, const Matrix& m) {
    if constexpr (std::endian::native == std::endian::little) {
        put_bytes(out, m.data(), sizeof(double) * static_cast<size_t>(m.size()));
    } else {
        for (Index i = 0; i < m.size(); ++i)
            put_f64(out, m.data()[i]);
    }
}

/// Cursor over an in-memory byte buffer; every read checks bounds.
class Reader {
public:
    Reader(const std::string& buf, std::string what)
        : buf_(buf), what_(std::move(what)) {}

    template <typename T>
    T get_le() {
        static_assert(std::is_integral_v<T>);
        need(sizeof(T));
        std::make_unsigned_t<T> u = 0;
        for (size_t i = 0; i < sizeof(T); ++i)
            u |= static_cast<std::make_unsigned_t<T>>(
                     static_cast<unsigned char>(buf_[pos_ + i]))
                 << (8 * i);
        pos_ += sizeof(T);
        return static_cast<T>(u);
    }

    double get_f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

    Matrix get_matrix(Index rows, Index cols) {
        const size_t n = static_cast<size_t>(rows) * static_cast<size_t>(cols);
        need(n * sizeof(double));
        Matrix m(rows, cols);
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(m.data(), buf_.data() + pos_, n * sizeof(double));
            pos_ += n * sizeof(double);
        } else {
            for (size_t i = 0; i < n; ++i) m.data()[i] = get_f64();
        }
        return m;
    }

    std::string get_magic() {
        need(4);
        std::string s = buf_.substr(pos_, 4);
        pos_ += 4;
        return s;
    }

    size_t pos() const { return pos_; }
    size_t remaining() const { return buf_.size() - pos_; }
    bool at_end() const { return pos_ == buf_.size(); }

private:
    void need(size_t n) {
        if (pos_ + n > buf_.size())
            throw FormatError(what_ + ": truncated payload");
    }
    const std::string& buf_;
    std::string what_;
    size_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

} // namespace deepafl::io
