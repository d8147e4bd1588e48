#include "eqnet/png.hpp"

#include <array>
#include <fstream>
#include <stdexcept>

namespace eqnet {

namespace {

uint32_t crc32(const uint8_t* data, size_t len, uint32_t crc = 0xffffffffu) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return crc;
}

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
  put_be32(out, static_cast<uint32_t>(payload.size()));
  const size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  put_be32(out, crc32(out.data() + start, out.size() - start) ^ 0xffffffffu);
}

}  // namespace

std::vector<uint8_t> encode_png_rgb8(int64_t width, int64_t height, const std::vector<uint8_t>& rgb) {
  if (width < 1 || height < 1) throw std::invalid_argument("png: empty image");
  if (static_cast<int64_t>(rgb.size()) != width * height * 3)
    throw std::invalid_argument("png: pixel buffer size mismatch");

  // raw stream: one filter byte (0) per scanline
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(height * (width * 3 + 1)));
  for (int64_t y = 0; y < height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), rgb.begin() + y * width * 3, rgb.begin() + (y + 1) * width * 3);
  }

  uint32_t a = 1, b = 0;
  for (uint8_t v : raw) {
    a = (a + v) % 65521u;
    b = (b + a) % 65521u;
  }
  const uint32_t adler = (b << 16) | a;

  std::vector<uint8_t> idat;
  idat.push_back(0x78);
  idat.push_back(0x01);
  size_t pos = 0;
  while (pos < raw.size()) {
    const size_t chunk = std::min<size_t>(65535, raw.size() - pos);
    const bool final = pos + chunk == raw.size();
    idat.push_back(final ? 1 : 0);
    idat.push_back(static_cast<uint8_t>(chunk & 0xff));
    idat.push_back(static_cast<uint8_t>(chunk >> 8));
    idat.push_back(static_cast<uint8_t>(~chunk & 0xff));
    idat.push_back(static_cast<uint8_t>((~chunk >> 8) & 0xff));
    idat.insert(idat.end(), raw.begin() + pos, raw.begin() + pos + chunk);
    pos += chunk;
  }
  put_be32(idat, adler);

  std::vector<uint8_t> ihdr;
  put_be32(ihdr, static_cast<uint32_t>(width));
  put_be32(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);

  std::vector<uint8_t> out = {137, 80, 78, 71, 13, 10, 26, 10};
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", idat);
  put_chunk(out, "IEND", {});
  return out;
}

void write_png_rgb8(const std::string& path, int64_t width, int64_t height,
                    const std::vector<uint8_t>& rgb) {
  const auto bytes = encode_png_rgb8(width, height, rgb);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace eqnet
