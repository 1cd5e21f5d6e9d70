#pragma once

#include <span>
#include <string>
#include <vector>

namespace mvdd::io {

// Grayscale PFM, little-endian (negative scale), rows stored bottom-up.
// Values are world-unit depths.
void write_pfm(const std::string& path, std::span<const double> values, int width, int height);

struct PfmImage {
  int width = 0, height = 0;
  std::vector<double> values;  // row-major, top-down
};

PfmImage read_pfm(const std::string& path);

}  // namespace mvdd::io
