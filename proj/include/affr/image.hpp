// Raster types shared by the data pipeline and the evaluator: RGB images,
// binary masks with run-length storage, resampling, and a minimal PNG codec.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace affr {

// Row-major RGB, channels interleaved, values in [0,1].
struct Image {
  int h = 0;
  int w = 0;
  std::vector<double> px;  // h*w*3

  static Image filled(int h, int w, double r, double g, double b);
  double* at(int y, int x) { return &px[(size_t(y) * w + x) * 3]; }
  const double* at(int y, int x) const { return &px[(size_t(y) * w + x) * 3]; }
};

// Row-major binary mask.
struct Mask {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> v;  // h*w, values 0/1

  int64_t area() const;
};

// Run-length encoding of a binary mask: row-major scan, alternating run
// lengths beginning with the zero run (a mask starting with 1 begins with a
// zero-length first run). Sum of counts equals h*w.
std::vector<int64_t> rle_encode(const Mask& m);
Mask rle_decode(const std::vector<int64_t>& counts, int h, int w);

// Even-odd scanline fill of a closed polygon given as x0,y0,x1,y1,... in
// pixel coordinates; a pixel is inside if its center is inside.
Mask polygon_to_mask(const std::vector<double>& poly, int h, int w);

// Bilinear resampling of a single-channel field (used to carry mask
// probabilities to ground-truth resolution). Sample positions follow the
// half-pixel convention: src = (dst + 0.5) * scale - 0.5.
std::vector<double> bilinear_resize(const std::vector<double>& src, int sh, int sw, int dh,
                                    int dw);

// Box-mean downsample of a binary mask by an integer factor, thresholded at
// 0.5 coverage. h and w must be multiples of the factor.
Mask downsample_mask(const Mask& m, int factor);

// Minimal PNG support, 8-bit RGB only. Encoding is deterministic (fixed
// filter and compression settings, no ancillary chunks).
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// Intersection-over-union of two binary masks (empty-vs-empty gives 1).
double mask_iou(const Mask& a, const Mask& b);

}  // namespace affr
