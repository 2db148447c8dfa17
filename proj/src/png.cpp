#include "fmu/png.hpp"

#include <zlib.h>

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

namespace fmu {

namespace {

uint32_t crc32_table_entry(uint32_t n) {
  uint32_t c = n;
  for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
  return c;
}

uint32_t png_crc32(const uint8_t* data, size_t len, uint32_t crc = 0xFFFFFFFFu) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t n = 0; n < 256; ++n) t[n] = crc32_table_entry(n);
    return t;
  }();
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc;
}

uint32_t adler32_of(const uint8_t* data, size_t len) {
  uint32_t s1 = 1, s2 = 0;
  for (size_t i = 0; i < len; ++i) {
    s1 = (s1 + data[i]) % 65521;
    s2 = (s2 + s1) % 65521;
  }
  return (s2 << 16) | s1;
}

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void append_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
  put_u32_be(out, static_cast<uint32_t>(data.size()));
  size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = png_crc32(out.data() + crc_start, out.size() - crc_start) ^ 0xFFFFFFFFu;
  put_u32_be(out, crc);
}

uint32_t read_u32_be(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

const uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

}  // namespace

void write_png(const std::string& path, const RawImage& img) {
  check_param(img.channels == 3, "write_png: only RGB images supported");
  check_param(img.width > 0 && img.height > 0, "write_png: empty image");

  std::vector<uint8_t> out(kSignature, kSignature + 8);

  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<uint32_t>(img.width));
  put_u32_be(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(out, "IHDR", ihdr);

  // Raw scanlines, filter 0 per row.
  const size_t stride = static_cast<size_t>(img.width) * 3;
  std::vector<uint8_t> raw;
  raw.reserve(img.height * (stride + 1));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const uint8_t* row = img.pixels.data() + static_cast<size_t>(y) * stride;
    raw.insert(raw.end(), row, row + stride);
  }

  // zlib stream with stored deflate blocks.
  std::vector<uint8_t> idat;
  idat.push_back(0x78);
  idat.push_back(0x01);
  size_t pos = 0;
  while (pos < raw.size()) {
    size_t n = std::min<size_t>(65535, raw.size() - pos);
    bool last = pos + n == raw.size();
    idat.push_back(last ? 1 : 0);
    idat.push_back(static_cast<uint8_t>(n & 0xFF));
    idat.push_back(static_cast<uint8_t>(n >> 8));
    idat.push_back(static_cast<uint8_t>(~n & 0xFF));
    idat.push_back(static_cast<uint8_t>((~n >> 8) & 0xFF));
    idat.insert(idat.end(), raw.begin() + pos, raw.begin() + pos + n);
    pos += n;
  }
  put_u32_be(idat, adler32_of(raw.data(), raw.size()));
  append_chunk(out, "IDAT", idat);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write_png: short write to " + path);
}

RawImage read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_png: cannot open " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < 8 || std::memcmp(buf.data(), kSignature, 8) != 0)
    throw FormatError("read_png: not a PNG file: " + path);

  int width = 0, height = 0, bit_depth = 0, color_type = 0;
  std::vector<uint8_t> zdata;
  size_t pos = 8;
  bool seen_ihdr = false;
  while (pos + 8 <= buf.size()) {
    uint32_t len = read_u32_be(buf.data() + pos);
    if (pos + 12 + len > buf.size()) throw FormatError("read_png: truncated chunk in " + path);
    std::string type(reinterpret_cast<const char*>(buf.data() + pos + 4), 4);
    const uint8_t* data = buf.data() + pos + 8;
    if (type == "IHDR") {
      if (len != 13) throw FormatError("read_png: bad IHDR");
      width = static_cast<int>(read_u32_be(data));
      height = static_cast<int>(read_u32_be(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      if (data[12] != 0) throw FormatError("read_png: interlaced PNGs unsupported");
      if (bit_depth != 8) throw FormatError("read_png: only 8-bit PNGs supported");
      if (color_type != 0 && color_type != 2 && color_type != 4 && color_type != 6)
        throw FormatError("read_png: palette PNGs unsupported");
      seen_ihdr = true;
    } else if (type == "IDAT") {
      zdata.insert(zdata.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (!seen_ihdr || width <= 0 || height <= 0) throw FormatError("read_png: missing IHDR");

  const int channels = color_type == 0 ? 1 : color_type == 2 ? 3 : color_type == 4 ? 2 : 4;
  const size_t stride = static_cast<size_t>(width) * channels;
  std::vector<uint8_t> raw(static_cast<size_t>(height) * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  int rc = uncompress(raw.data(), &raw_len, zdata.data(), static_cast<uLong>(zdata.size()));
  if (rc != Z_OK || raw_len != raw.size()) throw FormatError("read_png: corrupt image data in " + path);

  // Undo per-row filters in place, then collapse to RGB.
  std::vector<uint8_t> prev(stride, 0);
  RawImage img;
  img.width = width;
  img.height = height;
  img.channels = 3;
  img.pixels.resize(static_cast<size_t>(width) * height * 3);
  std::vector<uint8_t> cur(stride);
  for (int y = 0; y < height; ++y) {
    const uint8_t* src = raw.data() + static_cast<size_t>(y) * (stride + 1);
    uint8_t filter = src[0];
    const uint8_t* line = src + 1;
    for (size_t i = 0; i < stride; ++i) {
      int a = i >= static_cast<size_t>(channels) ? cur[i - channels] : 0;
      int b = prev[i];
      int c = i >= static_cast<size_t>(channels) ? prev[i - channels] : 0;
      int x = line[i];
      switch (filter) {
        case 0: break;
        case 1: x += a; break;
        case 2: x += b; break;
        case 3: x += (a + b) / 2; break;
        case 4: x += paeth(a, b, c); break;
        default: throw FormatError("read_png: unknown filter type");
      }
      cur[i] = static_cast<uint8_t>(x & 0xFF);
    }
    for (int px = 0; px < width; ++px) {
      const uint8_t* p = cur.data() + static_cast<size_t>(px) * channels;
      uint8_t r, g, bch;
      if (channels <= 2) {
        r = g = bch = p[0];
      } else {
        r = p[0];
        g = p[1];
        bch = p[2];
      }
      img.at(y, px, 0) = r;
      img.at(y, px, 1) = g;
      img.at(y, px, 2) = bch;
    }
    std::swap(prev, cur);
  }
  return img;
}

}  // namespace fmu
