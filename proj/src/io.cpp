#include "mvdd/io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mvdd::io {

void write_pfm(const std::string& path, std::span<const double> values, int width, int height) {
  if (values.size() != static_cast<size_t>(width) * height)
    throw std::invalid_argument("write_pfm: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pfm: cannot open " + path);
  out << "Pf\n" << width << " " << height << "\n-1.0\n";
  std::vector<float> row(width);
  for (int y = height - 1; y >= 0; --y) {  // bottom-up
    for (int x = 0; x < width; ++x)
      row[x] = static_cast<float>(values[static_cast<size_t>(y) * width + x]);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("write_pfm: write failed for " + path);
}

PfmImage read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pfm: cannot open " + path);
  std::string tag;
  in >> tag;
  if (tag != "Pf") throw std::runtime_error("read_pfm: expected grayscale Pf in " + path);
  PfmImage img;
  double scale = 0.0;
  in >> img.width >> img.height >> scale;
  in.get();  // newline before the raster
  if (img.width <= 0 || img.height <= 0) throw std::runtime_error("read_pfm: bad dimensions");
  if (scale >= 0.0) throw std::runtime_error("read_pfm: big-endian PFM not supported");
  img.values.resize(static_cast<size_t>(img.width) * img.height);
  std::vector<float> row(img.width);
  for (int y = img.height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) throw std::runtime_error("read_pfm: truncated raster in " + path);
    for (int x = 0; x < img.width; ++x)
      img.values[static_cast<size_t>(y) * img.width + x] = static_cast<double>(row[x]);
  }
  return img;
}

}  // namespace mvdd::io
