#pragma once

#include <string>

#include "comatch/tensor.hpp"

namespace comatch::pbm {

// Binary netpbm I/O, maxval 255 only.
// PPM carries {H,W,3} doubles in [0,1]; PGM carries raw {H,W} byte values.

void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

void write_pgm(const std::string& path, const Tensor& gray);
Tensor read_pgm(const std::string& path);

}  // namespace comatch::pbm
