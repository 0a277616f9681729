#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace mmfuse {

// Explicit little-endian encoding regardless of host; all binary formats in
// this project go through these two.
class LeWriter {
public:
    explicit LeWriter(const std::string& path);
    ~LeWriter();

    void u8(uint8_t v);
    void u32(uint32_t v);
    void u64(uint64_t v);
    void f32(float v);
    void f64(double v);
    void bytes(const void* data, size_t len);
    void str32(const std::string& s);  // u32 length + bytes

    // Writes went to path + ".tmp"; commit renames into place.
    void commit();

private:
    std::string path_;
    std::string tmp_path_;
    std::ofstream out_;
    bool committed_ = false;
};

class LeReader {
public:
    explicit LeReader(const std::string& path);

    uint8_t u8();
    uint32_t u32();
    uint64_t u64();
    float f32();
    double f64();
    void bytes(void* data, size_t len);
    std::string str32(uint32_t max_len = 1u << 20);

    bool at_eof();
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::ifstream in_;
};

}  // namespace mmfuse
