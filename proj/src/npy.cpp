#include "chatzero/npy.hpp"

#include <cstring>
#include <fstream>
#include <regex>

#include "chatzero/errors.hpp"

namespace chatzero {

void save_npy(const std::string& path, const Matrix& m) {
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(m.rows) + ", " +
                       std::to_string(m.cols) + "), }";
  // magic(6) + version(2) + length(2) + header, padded to a multiple of 64.
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xFF), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(m.data.data()), static_cast<std::streamsize>(m.data.size() * sizeof(float)));
  if (!out) throw Error("write failed for " + path);
}

Matrix load_npy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0) throw ParseError(path + ": not an .npy file");
  std::size_t header_len = 0;
  if (magic[6] == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    header_len = b[0] | (b[1] << 8);
  } else {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    header_len = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::size_t>(b[3]) << 24);
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (header.find("'<f4'") == std::string::npos) throw ParseError(path + ": only little-endian float32 is supported");
  if (header.find("'fortran_order': True") != std::string::npos) throw ParseError(path + ": Fortran order unsupported");
  std::smatch match;
  static const std::regex shape_re(R"('shape':\s*\((\d*)\s*,?\s*(\d*)\s*,?\s*\))");
  if (!std::regex_search(header, match, shape_re)) throw ParseError(path + ": missing shape");
  Matrix m;
  if (match[1].str().empty()) {
    m = Matrix(1, 1);
  } else if (match[2].str().empty()) {
    m = Matrix(1, std::stoi(match[1].str()));
  } else {
    m = Matrix(std::stoi(match[1].str()), std::stoi(match[2].str()));
  }
  in.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(m.data.size() * sizeof(float)));
  if (!in) throw ParseError(path + ": truncated data");
  return m;
}

}  // namespace chatzero
