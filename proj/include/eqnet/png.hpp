#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace eqnet {

// Minimal PNG writer: 8-bit RGB, filter 0, stored (uncompressed) deflate
// blocks, no ancillary chunks. Output bytes depend only on the pixel data,
// so identical renders are byte-identical files.
std::vector<uint8_t> encode_png_rgb8(int64_t width, int64_t height, const std::vector<uint8_t>& rgb);
void write_png_rgb8(const std::string& path, int64_t width, int64_t height,
                    const std::vector<uint8_t>& rgb);

}  // namespace eqnet
