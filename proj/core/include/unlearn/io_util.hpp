#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace unlearn::io {

/// Little-endian binary writer backed by a byte buffer.
class BinaryWriter {
public:
    void u8(std::uint8_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void str(const std::string& s);  // u32 length prefix + bytes
    void raw(const void* data, std::size_t n);
    const std::vector<std::uint8_t>& bytes() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

/// Little-endian reader; throws ParseError on truncation.
class BinaryReader {
public:
    explicit BinaryReader(std::vector<std::uint8_t> bytes);
    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    std::string str();
    bool at_end() const { return pos_ == buf_.size(); }
    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    void need(std::size_t n);
    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

/// Writes to <path>.tmp then renames, so a failed write never leaves a
/// corrupt file at the destination.
void atomic_write(const std::filesystem::path& path, const void* data, std::size_t n);
void atomic_write(const std::filesystem::path& path, const std::string& text);
void atomic_write(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Round-trip-exact decimal formatting for doubles (%.17g).
std::string format_double(double v);

}  // namespace unlearn::io
