#include "lire/binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "lire/errors.hpp"

namespace lire {

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string() + " for reading");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error("short write to " + path.string());
    }
}

void ByteWriter::put_bytes(std::string_view bytes) {
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

void ByteWriter::put_u8(std::uint8_t v) {
    buf_.push_back(v);
}

void ByteWriter::put_u16(std::uint16_t v) {
    buf_.push_back(static_cast<unsigned char>(v & 0xff));
    buf_.push_back(static_cast<unsigned char>(v >> 8));
}

void ByteWriter::put_u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        buf_.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
    }
}

void ByteWriter::put_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        buf_.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
    }
}

void ByteWriter::put_f32(float v) {
    put_u32(std::bit_cast<std::uint32_t>(v));
}

void ByteWriter::put_string(std::string_view s) {
    put_u32(static_cast<std::uint32_t>(s.size()));
    put_bytes(s);
}

void ByteWriter::save(const std::filesystem::path& path) const {
    write_file_bytes(path, buf_);
}

ByteReader ByteReader::load(const std::filesystem::path& path) {
    return ByteReader(read_file_bytes(path));
}

void ByteReader::need(std::size_t n, std::string_view what) const {
    if (remaining() < n) {
        throw FormatError("truncated input while reading " + std::string(what), pos_);
    }
}

std::string ByteReader::take_bytes(std::size_t n, std::string_view what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
}

std::uint8_t ByteReader::take_u8(std::string_view what) {
    need(1, what);
    return data_[pos_++];
}

std::uint16_t ByteReader::take_u16(std::string_view what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
}

std::uint32_t ByteReader::take_u32(std::string_view what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    }
    pos_ += 4;
    return v;
}

std::uint64_t ByteReader::take_u64(std::string_view what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    }
    pos_ += 8;
    return v;
}

float ByteReader::take_f32(std::string_view what) {
    return std::bit_cast<float>(take_u32(what));
}

std::string ByteReader::take_string(std::string_view what) {
    const std::uint32_t n = take_u32(what);
    return take_bytes(n, what);
}

void ByteReader::expect_header(std::string_view magic, std::uint16_t version) {
    const std::size_t at = pos_;
    if (take_bytes(magic.size(), "magic") != magic) {
        throw FormatError("bad magic, expected \"" + std::string(magic) + "\"", at);
    }
    const std::size_t vat = pos_;
    const std::uint16_t got = take_u16("version");
    if (got != version) {
        throw FormatError("unsupported version " + std::to_string(got) + ", expected " + std::to_string(version),
                          vat);
    }
}

void ByteReader::expect_end() const {
    if (remaining() != 0) {
        throw FormatError(std::to_string(remaining()) + " trailing bytes", pos_);
    }
}

}  // namespace lire
