#include "mmfuse/binio.hpp"

#include <cstdio>
#include <cstring>

#include "mmfuse/error.hpp"

namespace mmfuse {

LeWriter::LeWriter(const std::string& path) : path_(path), tmp_path_(path + ".tmp") {
    out_.open(tmp_path_, std::ios::binary | std::ios::trunc);
    if (!out_) {
        throw IoError("cannot open '" + tmp_path_ + "' for writing");
    }
}

LeWriter::~LeWriter() {
    if (!committed_) {
        out_.close();
        std::remove(tmp_path_.c_str());
    }
}

void LeWriter::u8(uint8_t v) {
    bytes(&v, 1);
}

void LeWriter::u32(uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    bytes(b, 4);
}

void LeWriter::u64(uint64_t v) {
    u32(static_cast<uint32_t>(v));
    u32(static_cast<uint32_t>(v >> 32));
}

void LeWriter::f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
}

void LeWriter::f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
}

void LeWriter::bytes(const void* data, size_t len) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
    if (!out_) {
        throw IoError("write failed on '" + tmp_path_ + "'");
    }
}

void LeWriter::str32(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
}

void LeWriter::commit() {
    out_.flush();
    if (!out_) {
        throw IoError("flush failed on '" + tmp_path_ + "'");
    }
    out_.close();
    if (std::rename(tmp_path_.c_str(), path_.c_str()) != 0) {
        throw IoError("cannot rename '" + tmp_path_ + "' to '" + path_ + "'");
    }
    committed_ = true;
}

LeReader::LeReader(const std::string& path) : path_(path) {
    in_.open(path, std::ios::binary);
    if (!in_) {
        throw IoError("cannot open '" + path + "' for reading");
    }
}

void LeReader::bytes(void* data, size_t len) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
    if (static_cast<size_t>(in_.gcount()) != len) {
        throw FormatError(FormatError::Kind::truncated, "unexpected end of file in '" + path_ + "'");
    }
}

uint8_t LeReader::u8() {
    uint8_t v;
    bytes(&v, 1);
    return v;
}

uint32_t LeReader::u32() {
    unsigned char b[4];
    bytes(b, 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t LeReader::u64() {
    uint64_t lo = u32();
    uint64_t hi = u32();
    return lo | (hi << 32);
}

float LeReader::f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

double LeReader::f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

std::string LeReader::str32(uint32_t max_len) {
    const uint32_t len = u32();
    if (len > max_len) {
        throw FormatError(FormatError::Kind::bad_field,
                          "string length " + std::to_string(len) + " exceeds limit in '" + path_ + "'");
    }
    std::string s(len, '\0');
    if (len > 0) {
        bytes(s.data(), len);
    }
    return s;
}

bool LeReader::at_eof() {
    return in_.peek() == std::char_traits<char>::eof();
}

}  // namespace mmfuse
