#include <iostream>
#include <string>
#include <vector>

#include "ive/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return ive::cli::run(args, std::cout, std::cerr);
}
