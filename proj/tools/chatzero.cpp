#include <iostream>

#include "chatzero/cli.hpp"

int main(int argc, char** argv) {
  return chatzero::dispatch(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
