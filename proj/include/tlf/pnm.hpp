#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tlf {

// 8-bit raster, interleaved channels; 1 channel maps to P5, 3 to P6.
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int y, int x, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

inline void write_pnm(const ImageU8& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_pnm: only 1 or 3 channels supported");
  if (static_cast<std::size_t>(img.width) * img.height * img.channels != img.pixels.size())
    throw std::invalid_argument("write_pnm: pixel buffer does not match extents");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_pnm: cannot open " + path);
  os << (img.channels == 1 ? "P5" : "P6") << "\n"
     << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw std::runtime_error("write_pnm: write failed for " + path);
}

namespace detail {

// Next header token, skipping whitespace and '#' comment lines.
inline std::string pnm_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw std::runtime_error("pnm: truncated header");
  return tok;
}

}  // namespace detail

inline ImageU8 read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_pnm: cannot open " + path);
  const std::string magic = detail::pnm_token(is);
  ImageU8 img;
  if (magic == "P5")
    img.channels = 1;
  else if (magic == "P6")
    img.channels = 3;
  else
    throw std::runtime_error("read_pnm: malformed magic '" + magic + "' in " + path);
  img.width = std::stoi(detail::pnm_token(is));
  img.height = std::stoi(detail::pnm_token(is));
  const int maxval = std::stoi(detail::pnm_token(is));
  if (img.width <= 0 || img.height <= 0 || maxval <= 0 || maxval > 255)
    throw std::runtime_error("read_pnm: unsupported header in " + path);
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  is.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!is) throw std::runtime_error("read_pnm: truncated pixel data in " + path);
  return img;
}

}  // namespace tlf
