#pragma once

#include <string>

#include "chatzero/matrix.hpp"

namespace chatzero {

// Little-endian float32 .npy files (format 1.0), 1-D or 2-D, C order.
void save_npy(const std::string& path, const Matrix& m);
Matrix load_npy(const std::string& path);

}  // namespace chatzero
