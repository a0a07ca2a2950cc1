#include <iostream>

#include "awe/cli.h"

int main(int argc, char** argv) {
  return awe::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
