#include "kneedet/netpbm.hpp"

#include <cctype>
#include <cmath>
#include <string>

#include "kneedet/errors.hpp"
#include "kneedet/fileio.hpp"

namespace kneedet {

namespace {

struct PnmHeader {
  char magic = '?';
  int width = 0, height = 0, maxval = 0;
  std::size_t raster_pos = 0;  // first byte after the maxval whitespace
};

// Token scanner over the header; '#' comments run to end of line.
class HeaderScanner {
 public:
  explicit HeaderScanner(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = static_cast<char>(bytes_[pos_]);
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  int next_int(const char* what) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      throw ParseError(std::string("pgm: expected ") + what);
    }
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1 << 30) {
        throw ParseError(std::string("pgm: ") + what + " out of range");
      }
      ++pos_;
    }
    return static_cast<int>(v);
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }
  std::span<const std::uint8_t> bytes() const { return bytes_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

PnmHeader parse_header(HeaderScanner& sc) {
  auto bytes = sc.bytes();
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '2' && bytes[1] != '5')) {
    throw ParseError("pgm: not a P2/P5 grayscale image");
  }
  PnmHeader h;
  h.magic = static_cast<char>(bytes[1]);
  sc.advance();
  sc.advance();
  h.width = sc.next_int("width");
  h.height = sc.next_int("height");
  h.maxval = sc.next_int("maxval");
  if (h.width <= 0 || h.height <= 0) {
    throw ParseError("pgm: non-positive dimensions");
  }
  if (h.maxval <= 0 || h.maxval > 65535) {
    throw ParseError("pgm: maxval must be in [1,65535]");
  }
  if (h.magic == '5') {
    // exactly one whitespace byte separates maxval from the raster
    if (sc.pos() >= bytes.size() ||
        !std::isspace(static_cast<unsigned char>(bytes[sc.pos()]))) {
      throw ParseError("pgm: missing whitespace before raster");
    }
    sc.advance();
  }
  h.raster_pos = sc.pos();
  return h;
}

}  // namespace

Tensor read_pgm(std::span<const std::uint8_t> bytes) {
  HeaderScanner sc(bytes);
  const PnmHeader h = parse_header(sc);
  Tensor t(1, h.height, h.width);
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  const double scale = 1.0 / h.maxval;

  if (h.magic == '5') {
    const int bpp = h.maxval > 255 ? 2 : 1;
    const std::size_t expected = h.raster_pos + n * bpp;
    if (bytes.size() < expected) {
      throw ParseError("pgm: truncated raster");
    }
    if (bytes.size() > expected) {
      throw ParseError("pgm: trailing bytes after raster");
    }
    std::size_t p = h.raster_pos;
    for (std::size_t i = 0; i < n; ++i) {
      int v = bytes[p++];
      if (bpp == 2) {
        v = (v << 8) | bytes[p++];
      }
      if (v > h.maxval) {
        throw ParseError("pgm: sample exceeds maxval");
      }
      t.data[i] = v * scale;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const int v = sc.next_int("sample");
      if (v > h.maxval) {
        throw ParseError("pgm: sample exceeds maxval");
      }
      t.data[i] = v * scale;
    }
    sc.skip_space_and_comments();
    if (sc.pos() != bytes.size()) {
      throw ParseError("pgm: trailing content after raster");
    }
  }
  return t;
}

Tensor read_pgm_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return read_pgm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::pair<int, int> read_pgm_size(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  HeaderScanner sc(bytes);
  try {
    const PnmHeader h = parse_header(sc);
    return {h.width, h.height};
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> write_pgm(const Tensor& gray) {
  if (gray.c != 1) {
    throw InvalidInputError("write_pgm expects a 1-channel tensor");
  }
  std::string header =
      "P5\n" + std::to_string(gray.w) + " " + std::to_string(gray.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + gray.data.size());
  for (double v : gray.data) {
    const double c = std::clamp(v, 0.0, 1.0);
    out.push_back(static_cast<std::uint8_t>(std::lround(c * 255.0)));
  }
  return out;
}

std::vector<std::uint8_t> write_ppm(int width, int height,
                                    const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3) {
    throw InvalidInputError("write_ppm: rgb buffer size mismatch");
  }
  std::string header =
      "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), rgb.begin(), rgb.end());
  return out;
}

}  // namespace kneedet
