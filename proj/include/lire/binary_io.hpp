#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lire {

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes);

// Little-endian encoder into an in-memory buffer.
class ByteWriter {
public:
    void put_bytes(std::string_view bytes);
    void put_u8(std::uint8_t v);
    void put_u16(std::uint16_t v);
    void put_u32(std::uint32_t v);
    void put_u64(std::uint64_t v);
    void put_f32(float v);
    void put_string(std::string_view s);  // u32 length + bytes

    const std::vector<unsigned char>& bytes() const noexcept { return buf_; }

    // Writes the buffer to `path`, replacing any existing file.
    void save(const std::filesystem::path& path) const;

private:
    std::vector<unsigned char> buf_;
};

// Little-endian decoder; every failure is a FormatError carrying the byte offset.
class ByteReader {
public:
    explicit ByteReader(std::vector<unsigned char> data) : data_(std::move(data)) {}

    static ByteReader load(const std::filesystem::path& path);

    std::string take_bytes(std::size_t n, std::string_view what);
    std::uint8_t take_u8(std::string_view what);
    std::uint16_t take_u16(std::string_view what);
    std::uint32_t take_u32(std::string_view what);
    std::uint64_t take_u64(std::string_view what);
    float take_f32(std::string_view what);
    std::string take_string(std::string_view what);

    // Validates a 4-byte magic tag followed by a u16 version.
    void expect_header(std::string_view magic, std::uint16_t version);

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    void expect_end() const;

private:
    void need(std::size_t n, std::string_view what) const;

    std::vector<unsigned char> data_;
    std::size_t pos_ = 0;
};

}  // namespace lire
