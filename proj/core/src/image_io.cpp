#include "pneumo/image_io.hpp"

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "pneumo/error.hpp"

namespace pneumo {

namespace {

// Reads one PGM header token, skipping whitespace and # comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

Tensor read_pgm(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open image " + file.string());
  if (next_token(in) != "P5") throw DataError("not a binary PGM (P5) file: " + file.string());
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(in));
    h = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw DataError("malformed PGM header in " + file.string());
  }
  if (w <= 0 || h <= 0 || maxval != 255)
    throw DataError("unsupported PGM geometry/depth in " + file.string());
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw DataError("truncated PGM payload in " + file.string());
  Tensor img({1, h, w});
  for (std::size_t i = 0; i < raw.size(); ++i) img[i] = raw[i] / 255.0;
  return img;
}

void write_pgm(const std::filesystem::path& file, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 1)
    throw DimensionError("write_pgm: image must be 1 x H x W, got " + image.shape_str());
  const int h = image.dim(1), w = image.dim(2);
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write image " + file.string());
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    double v = image[i];
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw DataError("failed writing image payload " + file.string());
}

}  // namespace pneumo
