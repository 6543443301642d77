#include "posefield/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "posefield/check.hpp"

namespace posefield {

namespace {

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
  out.push_back((v >> 24) & 0xff);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back(v & 0xff);
}

uint32_t get_u32(const unsigned char* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void write_chunk(std::ofstream& os, const char type[4], const std::vector<unsigned char>& data) {
  std::vector<unsigned char> head;
  put_u32(head, uint32_t(data.size()));
  os.write(reinterpret_cast<const char*>(head.data()), 4);
  os.write(type, 4);
  if (!data.empty()) os.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty()) crc = crc32(crc, data.data(), uInt(data.size()));
  std::vector<unsigned char> tail;
  put_u32(tail, uint32_t(crc));
  os.write(reinterpret_cast<const char*>(tail.data()), 4);
}

unsigned char to_byte(float v) {
  const float c = std::min(1.0f, std::max(0.0f, v));
  return static_cast<unsigned char>(std::lround(c * 255.0f));
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
  PF_CHECK_MSG(img.width > 0 && img.height > 0, "write_png: empty image");
  PF_CHECK_MSG(img.channels == 3 || img.channels == 1, "write_png: expects 1 or 3 channels");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw NumericalError("write_png: cannot open " + path);

  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<unsigned char> ihdr;
  put_u32(ihdr, uint32_t(img.width));
  put_u32(ihdr, uint32_t(img.height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: RGB
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter method
  ihdr.push_back(0);   // no interlace
  write_chunk(os, "IHDR", ihdr);

  std::vector<unsigned char> raw;
  raw.reserve(size_t(img.height) * (1 + size_t(img.width) * 3));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        raw.push_back(to_byte(img.at(x, y, img.channels == 1 ? 0 : c)));
  }
  uLongf bound = compressBound(uLong(raw.size()));
  std::vector<unsigned char> compressed(bound);
  const int rc = compress2(compressed.data(), &bound, raw.data(), uLong(raw.size()), 9);
  PF_CHECK_MSG(rc == Z_OK, "write_png: deflate failed");
  compressed.resize(bound);
  write_chunk(os, "IDAT", compressed);
  write_chunk(os, "IEND", {});
}

Image read_png(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw StructuralError("read_png: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  PF_CHECK_MSG(bytes.size() > 8 && std::memcmp(bytes.data(), sig, 8) == 0,
               "read_png: bad signature in " << path);

  int width = 0, height = 0, color_type = -1;
  std::vector<unsigned char> idat;
  size_t at = 8;
  while (at + 8 <= bytes.size()) {
    const uint32_t len = get_u32(&bytes[at]);
    PF_CHECK_MSG(at + 12 + len <= bytes.size(), "read_png: truncated chunk in " << path);
    const char* type = reinterpret_cast<const char*>(&bytes[at + 4]);
    const unsigned char* data = &bytes[at + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      width = int(get_u32(data));
      height = int(get_u32(data + 4));
      const int depth = data[8];
      color_type = data[9];
      PF_CHECK_MSG(depth == 8, "read_png: only 8-bit images supported: " << path);
      PF_CHECK_MSG(color_type == 0 || color_type == 2 || color_type == 6,
                   "read_png: unsupported color type " << color_type);
      PF_CHECK_MSG(data[12] == 0, "read_png: interlaced images unsupported");
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    at += 12 + len;
  }
  PF_CHECK_MSG(width > 0 && height > 0 && !idat.empty(), "read_png: missing IHDR/IDAT");

  const int src_ch = color_type == 0 ? 1 : (color_type == 2 ? 3 : 4);
  const size_t stride = size_t(width) * size_t(src_ch);
  std::vector<unsigned char> raw(static_cast<size_t>(height) * (stride + 1));
  uLongf raw_len = uLongf(raw.size());
  const int rc = uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size()));
  PF_CHECK_MSG(rc == Z_OK && raw_len == raw.size(), "read_png: inflate failed for " << path);

  // undo per-scanline filters in place
  std::vector<unsigned char> prev(stride, 0);
  Image img(width, height, 3);
  std::vector<unsigned char> line(stride);
  for (int y = 0; y < height; ++y) {
    const unsigned char filter = raw[size_t(y) * (stride + 1)];
    const unsigned char* src = &raw[size_t(y) * (stride + 1) + 1];
    for (size_t i = 0; i < stride; ++i) {
      const int a = i >= size_t(src_ch) ? line[i - size_t(src_ch)] : 0;
      const int b = prev[i];
      const int c = i >= size_t(src_ch) ? prev[i - size_t(src_ch)] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw StructuralError("read_png: unknown filter type");
      }
      line[i] = static_cast<unsigned char>(v & 0xff);
    }
    prev = line;
    for (int x = 0; x < width; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        const unsigned char v = src_ch == 1 ? line[size_t(x)] : line[size_t(x) * size_t(src_ch) + size_t(ch)];
        img.at(x, y, ch) = float(v) / 255.0f;
      }
    }
  }
  return img;
}

void write_depth_raw(const std::string& path, int width, int height,
                     const std::vector<float>& depth) {
  PF_CHECK_MSG(int(depth.size()) == width * height, "write_depth_raw: size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw NumericalError("write_depth_raw: cannot open " + path);
  os.write("PFDEPTH1", 8);
  const uint32_t w = uint32_t(width), h = uint32_t(height);
  os.write(reinterpret_cast<const char*>(&w), 4);
  os.write(reinterpret_cast<const char*>(&h), 4);
  os.write(reinterpret_cast<const char*>(depth.data()), std::streamsize(depth.size() * 4));
}

std::vector<float> read_depth_raw(const std::string& path, int& width, int& height) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw StructuralError("read_depth_raw: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  PF_CHECK_MSG(std::memcmp(magic, "PFDEPTH1", 8) == 0, "read_depth_raw: bad magic");
  uint32_t w = 0, h = 0;
  is.read(reinterpret_cast<char*>(&w), 4);
  is.read(reinterpret_cast<char*>(&h), 4);
  width = int(w);
  height = int(h);
  std::vector<float> depth(static_cast<size_t>(w) * size_t(h));
  is.read(reinterpret_cast<char*>(depth.data()), std::streamsize(depth.size() * 4));
  PF_CHECK_MSG(bool(is), "read_depth_raw: truncated file");
  return depth;
}

double psnr(const Image& a, const Image& b) {
  PF_CHECK_MSG(a.same_shape(b), "psnr: shape mismatch");
  double mse = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    mse += d * d;
  }
  mse /= double(a.data.size());
  if (mse <= 0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace {
std::vector<double> luma(const Image& img) {
  std::vector<double> out(static_cast<size_t>(img.width) * size_t(img.height));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (img.channels >= 3)
        out[size_t(y) * size_t(img.width) + size_t(x)] =
            0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
      else
        out[size_t(y) * size_t(img.width) + size_t(x)] = img.at(x, y, 0);
    }
  return out;
}
}  // namespace

double ssim(const Image& a, const Image& b) {
  PF_CHECK_MSG(a.same_shape(b), "ssim: shape mismatch");
  constexpr int kWin = 11;
  PF_CHECK_MSG(a.width >= kWin && a.height >= kWin, "ssim: image smaller than the 11x11 window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  double kernel[kWin];
  double ksum = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    kernel[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    ksum += kernel[i];
  }
  for (double& k : kernel) k /= ksum;

  const std::vector<double> la = luma(a), lb = luma(b);
  const int w = a.width, h = a.height;
  auto filter = [&](const std::vector<double>& src) {
    std::vector<double> tmp(static_cast<size_t>(w) * size_t(h), 0.0);
    std::vector<double> dst(static_cast<size_t>(w - kWin + 1) * size_t(h - kWin + 1), 0.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x + kWin <= w; ++x) {
        double acc = 0;
        for (int i = 0; i < kWin; ++i) acc += kernel[i] * src[size_t(y) * size_t(w) + size_t(x + i)];
        tmp[size_t(y) * size_t(w) + size_t(x)] = acc;
      }
    for (int y = 0; y + kWin <= h; ++y)
      for (int x = 0; x + kWin <= w; ++x) {
        double acc = 0;
        for (int i = 0; i < kWin; ++i) acc += kernel[i] * tmp[size_t(y + i) * size_t(w) + size_t(x)];
        dst[size_t(y) * size_t(w - kWin + 1) + size_t(x)] = acc;
      }
    return dst;
  };

  std::vector<double> aa(la.size()), bb(lb.size()), ab(la.size());
  for (size_t i = 0; i < la.size(); ++i) {
    aa[i] = la[i] * la[i];
    bb[i] = lb[i] * lb[i];
    ab[i] = la[i] * lb[i];
  }
  const auto mu_a = filter(la), mu_b = filter(lb);
  const auto m_aa = filter(aa), m_bb = filter(bb), m_ab = filter(ab);

  double total = 0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    const double va = m_aa[i] - mu_a[i] * mu_a[i];
    const double vb = m_bb[i] - mu_b[i] * mu_b[i];
    const double cov = m_ab[i] - mu_a[i] * mu_b[i];
    total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
  }
  return total / double(mu_a.size());
}

}  // namespace posefield
