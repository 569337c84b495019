#include "affr/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace affr {

Image Image::filled(int h, int w, double r, double g, double b) {
  Image img;
  img.h = h;
  img.w = w;
  img.px.resize(size_t(h) * w * 3);
  for (int i = 0; i < h * w; ++i) {
    img.px[size_t(i) * 3 + 0] = r;
    img.px[size_t(i) * 3 + 1] = g;
    img.px[size_t(i) * 3 + 2] = b;
  }
  return img;
}

int64_t Mask::area() const {
  int64_t a = 0;
  for (uint8_t x : v) a += x;
  return a;
}

std::vector<int64_t> rle_encode(const Mask& m) {
  std::vector<int64_t> counts;
  uint8_t cur = 0;  // runs alternate starting from zeros
  int64_t run = 0;
  for (size_t i = 0; i < m.v.size(); ++i) {
    uint8_t bit = m.v[i] ? 1 : 0;
    if (bit == cur) {
      ++run;
    } else {
      counts.push_back(run);
      cur = bit;
      run = 1;
    }
  }
  counts.push_back(run);
  if (m.v.empty()) counts = {0};
  return counts;
}

Mask rle_decode(const std::vector<int64_t>& counts, int h, int w) {
  Mask m;
  m.h = h;
  m.w = w;
  m.v.assign(size_t(h) * w, 0);
  int64_t pos = 0;
  uint8_t cur = 0;
  for (int64_t c : counts) {
    if (c < 0 || pos + c > int64_t(m.v.size()))
      throw std::runtime_error("RLE counts exceed mask size");
    if (cur) std::fill(m.v.begin() + pos, m.v.begin() + pos + c, uint8_t(1));
    pos += c;
    cur = uint8_t(1 - cur);
  }
  if (pos != int64_t(m.v.size())) throw std::runtime_error("RLE counts do not cover mask");
  return m;
}

Mask polygon_to_mask(const std::vector<double>& poly, int h, int w) {
  if (poly.size() < 6 || poly.size() % 2 != 0)
    throw std::runtime_error("polygon needs at least 3 (x,y) points");
  Mask m;
  m.h = h;
  m.w = w;
  m.v.assign(size_t(h) * w, 0);
  size_t n = poly.size() / 2;
  std::vector<double> xs;
  for (int y = 0; y < h; ++y) {
    double cy = y + 0.5;
    xs.clear();
    for (size_t i = 0; i < n; ++i) {
      double x0 = poly[2 * i], y0 = poly[2 * i + 1];
      double x1 = poly[2 * ((i + 1) % n)], y1 = poly[2 * ((i + 1) % n) + 1];
      if ((y0 <= cy && y1 > cy) || (y1 <= cy && y0 > cy))
        xs.push_back(x0 + (cy - y0) / (y1 - y0) * (x1 - x0));
    }
    std::sort(xs.begin(), xs.end());
    for (size_t i = 0; i + 1 < xs.size(); i += 2) {
      int xa = std::max(0, int(std::ceil(xs[i] - 0.5)));
      int xb = std::min(w - 1, int(std::floor(xs[i + 1] - 0.5)));
      for (int x = xa; x <= xb; ++x) m.v[size_t(y) * w + x] = 1;
    }
  }
  return m;
}

std::vector<double> bilinear_resize(const std::vector<double>& src, int sh, int sw, int dh,
                                    int dw) {
  if (int64_t(src.size()) != int64_t(sh) * sw) throw std::runtime_error("bad source size");
  std::vector<double> dst(size_t(dh) * dw);
  double sy = double(sh) / dh, sx = double(sw) / dw;
  for (int y = 0; y < dh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = int(std::floor(fy));
    double wy = fy - y0;
    int ya = std::clamp(y0, 0, sh - 1), yb = std::clamp(y0 + 1, 0, sh - 1);
    for (int x = 0; x < dw; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = int(std::floor(fx));
      double wx = fx - x0;
      int xa = std::clamp(x0, 0, sw - 1), xb = std::clamp(x0 + 1, 0, sw - 1);
      double top = src[size_t(ya) * sw + xa] * (1 - wx) + src[size_t(ya) * sw + xb] * wx;
      double bot = src[size_t(yb) * sw + xa] * (1 - wx) + src[size_t(yb) * sw + xb] * wx;
      dst[size_t(y) * dw + x] = top * (1 - wy) + bot * wy;
    }
  }
  return dst;
}

Mask downsample_mask(const Mask& m, int factor) {
  if (factor <= 0 || m.h % factor != 0 || m.w % factor != 0)
    throw std::runtime_error("mask dims must be multiples of the downsample factor");
  Mask out;
  out.h = m.h / factor;
  out.w = m.w / factor;
  out.v.assign(size_t(out.h) * out.w, 0);
  int half = factor * factor;  // threshold: strictly more than half covered, or exactly half
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      int cnt = 0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx)
          cnt += m.v[size_t(y * factor + dy) * m.w + (x * factor + dx)];
      out.v[size_t(y) * out.w + x] = (2 * cnt >= half) ? 1 : 0;
    }
  return out;
}

double mask_iou(const Mask& a, const Mask& b) {
  if (a.h != b.h || a.w != b.w) throw std::runtime_error("mask IoU on mismatched sizes");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    inter += (a.v[i] && b.v[i]) ? 1 : 0;
    uni += (a.v[i] || b.v[i]) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return double(inter) / double(uni);
}

// ---- PNG ----

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

uint32_t get_u32(const uint8_t* p) {
  return uint32_t(p[0]) << 24 | uint32_t(p[1]) << 16 | uint32_t(p[2]) << 8 | uint32_t(p[3]);
}

void write_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
  put_u32(out, uint32_t(data.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = uint32_t(crc32(0, out.data() + start, uInt(out.size() - start)));
  put_u32(out, crc);
}

uint8_t to_byte(double v) {
  double c = std::clamp(v, 0.0, 1.0);
  return uint8_t(std::lround(c * 255.0));
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
  std::vector<uint8_t> raw;  // filter byte 0 + RGB rows
  raw.reserve(size_t(img.h) * (size_t(img.w) * 3 + 1));
  for (int y = 0; y < img.h; ++y) {
    raw.push_back(0);
    for (int x = 0; x < img.w; ++x) {
      const double* p = img.at(y, x);
      raw.push_back(to_byte(p[0]));
      raw.push_back(to_byte(p[1]));
      raw.push_back(to_byte(p[2]));
    }
  }
  uLongf bound = compressBound(uLong(raw.size()));
  std::vector<uint8_t> z(bound);
  if (compress2(z.data(), &bound, raw.data(), uLong(raw.size()), 6) != Z_OK)
    throw std::runtime_error("PNG deflate failed");
  z.resize(bound);

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  put_u32(ihdr, uint32_t(img.w));
  put_u32(ihdr, uint32_t(img.h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type RGB
  ihdr.push_back(0);  // deflate
  ihdr.push_back(0);  // filter method 0
  ihdr.push_back(0);  // no interlace
  write_chunk(out, "IHDR", ihdr);
  write_chunk(out, "IDAT", z);
  write_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
  if (!f) throw std::runtime_error("short write: " + path);
}

Image read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<uint8_t> data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (data.size() < 8 || std::memcmp(data.data(), sig, 8) != 0)
    throw std::runtime_error("not a PNG file: " + path);

  int w = 0, h = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  bool seen_ihdr = false;
  while (pos + 8 <= data.size()) {
    uint32_t len = get_u32(&data[pos]);
    std::string type(reinterpret_cast<const char*>(&data[pos + 4]), 4);
    if (pos + 12 + len > data.size()) throw std::runtime_error("truncated PNG: " + path);
    const uint8_t* body = &data[pos + 8];
    if (type == "IHDR") {
      w = int(get_u32(body));
      h = int(get_u32(body + 4));
      if (body[8] != 8 || body[9] != 2 || body[12] != 0)
        throw std::runtime_error("unsupported PNG format (need 8-bit RGB, no interlace)");
      seen_ihdr = true;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), body, body + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (!seen_ihdr || w <= 0 || h <= 0) throw std::runtime_error("malformed PNG: " + path);

  size_t stride = size_t(w) * 3;
  std::vector<uint8_t> raw(size_t(h) * (stride + 1));
  uLongf rawlen = uLongf(raw.size());
  if (uncompress(raw.data(), &rawlen, idat.data(), uLong(idat.size())) != Z_OK ||
      rawlen != raw.size())
    throw std::runtime_error("PNG inflate failed: " + path);

  // Undo per-row filters (types 0-4).
  std::vector<uint8_t> pix(size_t(h) * stride);
  for (int y = 0; y < h; ++y) {
    uint8_t filt = raw[size_t(y) * (stride + 1)];
    const uint8_t* src = &raw[size_t(y) * (stride + 1) + 1];
    uint8_t* cur = &pix[size_t(y) * stride];
    const uint8_t* up = y > 0 ? &pix[size_t(y - 1) * stride] : nullptr;
    for (size_t x = 0; x < stride; ++x) {
      int a = x >= 3 ? cur[x - 3] : 0;
      int b = up ? up[x] : 0;
      int c = (up && x >= 3) ? up[x - 3] : 0;
      int v = src[x];
      switch (filt) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: {
          int p = a + b - c;
          int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
          v += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
          break;
        }
        default: throw std::runtime_error("unsupported PNG filter");
      }
      cur[x] = uint8_t(v & 0xff);
    }
  }

  Image img;
  img.h = h;
  img.w = w;
  img.px.resize(size_t(h) * w * 3);
  for (size_t i = 0; i < img.px.size(); ++i) img.px[i] = double(pix[i]) / 255.0;
  return img;
}

}  // namespace affr
