#include "simco/image.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace simco {

double color_distance(Rgb a, Rgb b) {
  const double dr = double(a.r) - b.r;
  const double dg = double(a.g) - b.g;
  const double db = double(a.b) - b.b;
  return std::sqrt(dr * dr + dg * dg + db * db);
}

double iou(const BBox& a, const BBox& b) {
  const int ix0 = std::max(a.x0, b.x0);
  const int iy0 = std::max(a.y0, b.y0);
  const int ix1 = std::min(a.x1, b.x1);
  const int iy1 = std::min(a.y1, b.y1);
  if (ix1 < ix0 || iy1 < iy0) return 0.0;
  const double inter = double(ix1 - ix0 + 1) * double(iy1 - iy0 + 1);
  return inter / (double(a.area()) + double(b.area()) - inter);
}

RasterImage::RasterImage(int width, int height, Rgb fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw Error("RasterImage: negative dimensions");
  data_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < data_.size(); i += 3) {
    data_[i] = fill.r;
    data_[i + 1] = fill.g;
    data_[i + 2] = fill.b;
  }
}

void write_ppm(const std::filesystem::path& path, const RasterImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.bytes().data()),
            static_cast<std::streamsize>(image.bytes().size()));
  if (!out) throw IoError("write failed: " + path.string());
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

RasterImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  if (next_token(in) != "P6") throw IoError("not a binary PPM (P6): " + path.string());
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(in));
    h = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw IoError("malformed PPM header: " + path.string());
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError("unsupported PPM header: " + path.string());
  RasterImage img(w, h);
  in.read(reinterpret_cast<char*>(img.bytes().data()), static_cast<std::streamsize>(img.bytes().size()));
  if (in.gcount() != static_cast<std::streamsize>(img.bytes().size()))
    throw IoError("truncated PPM data: " + path.string());
  return img;
}

void draw_box(RasterImage& image, const BBox& box, Rgb color, int stroke) {
  for (int s = 0; s < stroke; ++s) {
    const int x0 = box.x0 + s, y0 = box.y0 + s, x1 = box.x1 - s, y1 = box.y1 - s;
    if (x1 < x0 || y1 < y0) break;
    auto put = [&](int x, int y) {
      if (x >= 0 && y >= 0 && x < image.width() && y < image.height()) image.set(x, y, color);
    };
    for (int x = x0; x <= x1; ++x) {
      put(x, y0);
      put(x, y1);
    }
    for (int y = y0; y <= y1; ++y) {
      put(x0, y);
      put(x1, y);
    }
  }
}

}  // namespace simco
