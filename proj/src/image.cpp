#include "meshforge/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "meshforge/error.hpp"

namespace meshforge {

namespace {

void write_header(std::ofstream& out, const Image& img, int maxval) {
  out << "P5\n" << img.width << ' ' << img.height << '\n' << maxval << '\n';
}

}  // namespace

void save_pgm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_header(out, img, 255);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(img.width) * img.height);
  for (Eigen::Index i = 0; i < img.pixels.size(); ++i) {
    Scalar v = std::clamp<Scalar>(img.pixels(i), 0.0, 1.0);
    bytes[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void save_pgm_depth(const Image& img, Scalar far, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_header(out, img, 65535);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(img.width) * img.height * 2);
  for (Eigen::Index i = 0; i < img.pixels.size(); ++i) {
    Scalar v = img.pixels(i);
    unsigned value = 65535;  // background sentinel
    if (std::isfinite(v)) value = static_cast<unsigned>(std::clamp<Scalar>(v / far, 0.0, 1.0) * 65534.0);
    bytes[2 * static_cast<std::size_t>(i)] = static_cast<unsigned char>(value >> 8);
    bytes[2 * static_cast<std::size_t>(i) + 1] = static_cast<unsigned char>(value & 0xff);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Image load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5") throw IoError(path.string() + " is not a binary PGM file");
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  in.get();  // single whitespace after the header
  if (w <= 0 || h <= 0 || (maxval != 255 && maxval != 65535))
    throw IoError(path.string() + " has an unsupported PGM header");
  Image img(w, h);
  const std::size_t count = static_cast<std::size_t>(w) * h;
  if (maxval == 255) {
    std::vector<unsigned char> bytes(count);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(count));
    if (!in) throw IoError(path.string() + " is truncated");
    for (std::size_t i = 0; i < count; ++i)
      img.pixels(static_cast<Eigen::Index>(i)) = bytes[i] / 255.0;
  } else {
    std::vector<unsigned char> bytes(count * 2);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(count * 2));
    if (!in) throw IoError(path.string() + " is truncated");
    for (std::size_t i = 0; i < count; ++i)
      img.pixels(static_cast<Eigen::Index>(i)) = (bytes[2 * i] * 256 + bytes[2 * i + 1]) / 65535.0;
  }
  return img;
}

}  // namespace meshforge
