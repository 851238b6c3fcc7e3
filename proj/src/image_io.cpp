#include "prodg/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

namespace prodg {
namespace {

unsigned char quantize(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void skip_space_and_comments(std::istream& in) {
  for (;;) {
    const int ch = in.peek();
    if (ch == '#') {
      std::string discard;
      std::getline(in, discard);
    } else if (ch != EOF && std::isspace(ch)) {
      in.get();
    } else {
      return;
    }
  }
}

long read_header_int(std::istream& in, const std::filesystem::path& path) {
  skip_space_and_comments(in);
  long v = -1;
  if (!(in >> v) || v <= 0) throw InvalidArgument("bad netpbm header in " + path.string());
  return v;
}

}  // namespace

void write_netpbm(const std::filesystem::path& path, const Image& image) {
  const Index ch = image.shape.channels;
  if (ch != 1 && ch != 3) throw InvalidArgument("write_netpbm: only 1 or 3 channels supported");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot open " + path.string() + " for writing");
  out << (ch == 3 ? "P6" : "P5") << '\n' << image.shape.width << ' ' << image.shape.height << "\n255\n";
  std::string row;
  for (Index h = 0; h < image.shape.height; ++h)
    for (Index w = 0; w < image.shape.width; ++w)
      for (Index c = 0; c < ch; ++c) row.push_back(static_cast<char>(quantize(image.at(c, h, w))));
  out.write(row.data(), static_cast<std::streamsize>(row.size()));
  if (!out) throw InvalidArgument("failed writing " + path.string());
}

Image read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read image " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  Index ch = 0;
  if (magic == "P6") ch = 3;
  else if (magic == "P5") ch = 1;
  else throw InvalidArgument("not a binary PPM/PGM file: " + path.string());
  const long width = read_header_int(in, path);
  const long height = read_header_int(in, path);
  const long maxval = read_header_int(in, path);
  if (maxval != 255) throw InvalidArgument("only 8-bit netpbm supported: " + path.string());
  in.get();  // single whitespace before raster
  const std::size_t count = static_cast<std::size_t>(width * height * ch);
  std::string raster(count, '\0');
  if (!in.read(raster.data(), static_cast<std::streamsize>(count)))
    throw InvalidArgument("truncated raster in " + path.string());
  Image img = Image::zeros({ch, height, width});
  std::size_t i = 0;
  for (Index h = 0; h < height; ++h)
    for (Index w = 0; w < width; ++w)
      for (Index c = 0; c < ch; ++c)
        img.at(c, h, w) = static_cast<unsigned char>(raster[i++]) / 255.0;
  return img;
}

void write_heatmap(const std::filesystem::path& path, const Matrix& heatmap) {
  Image img = Image::zeros({1, heatmap.rows(), heatmap.cols()});
  for (Index h = 0; h < heatmap.rows(); ++h)
    for (Index w = 0; w < heatmap.cols(); ++w) img.at(0, h, w) = heatmap(h, w);
  write_netpbm(path, img);
}

}  // namespace prodg
