#include "skna/container.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "skna/error.hpp"

namespace skna {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T value{};
    std::memcpy(&value, take(sizeof(T)).data(), sizeof(T));
    return value;
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) {
      throw Error(ErrorCode::Truncated, "truncated payload");
    }
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large payloads in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const auto n = std::min(kChunk, bytes.size() - off);
    crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> encode_container(const Magic& magic, std::uint16_t version,
                                           const std::string& metadata,
                                           std::span<const float> payload) {
  std::vector<std::uint8_t> out;
  out.reserve(32 + metadata.size() + payload.size_bytes());
  out.insert(out.end(), magic.begin(), magic.end());
  put<std::uint16_t>(out, version);
  const std::size_t body_start = out.size();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(metadata.size()));
  out.insert(out.end(), metadata.begin(), metadata.end());
  put<std::uint64_t>(out, payload.size_bytes());
  const auto* p = reinterpret_cast<const std::uint8_t*>(payload.data());
  out.insert(out.end(), p, p + payload.size_bytes());
  const auto crc = crc32_of(std::span(out).subspan(body_start));
  put<std::uint32_t>(out, crc);
  return out;
}

Container decode_container(const Magic& magic, std::uint16_t version,
                           std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  const auto head = in.take(magic.size());
  if (!std::equal(head.begin(), head.end(),
                  reinterpret_cast<const std::uint8_t*>(magic.data()))) {
    throw Error(ErrorCode::BadMagic, "magic number mismatch");
  }
  const auto found = in.get<std::uint16_t>();
  if (found != version) {
    throw Error(ErrorCode::VersionMismatch,
                "format version " + std::to_string(found) + ", expected " +
                    std::to_string(version));
  }
  const std::size_t body_start = in.pos();
  const auto meta_len = in.get<std::uint32_t>();
  const auto meta = in.take(meta_len);
  const auto payload_len = in.get<std::uint64_t>();
  if (payload_len % sizeof(float) != 0) {
    throw Error(ErrorCode::Truncated, "payload is not a whole number of floats");
  }
  const auto payload = in.take(payload_len);
  const std::size_t body_end = in.pos();
  const auto stored_crc = in.get<std::uint32_t>();
  if (crc32_of(bytes.subspan(body_start, body_end - body_start)) != stored_crc) {
    throw Error(ErrorCode::Checksum, "CRC32 mismatch");
  }

  Container c;
  c.metadata.assign(reinterpret_cast<const char*>(meta.data()), meta.size());
  c.payload.resize(payload_len / sizeof(float));
  std::memcpy(c.payload.data(), payload.data(), payload_len);
  return c;
}

void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, "rename failed: " + ec.message());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw Error(ErrorCode::NotFound, "cannot open " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<std::uint8_t> bytes(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error(ErrorCode::Io, "read failed: " + path.string());
  return bytes;
}

}  // namespace skna
