#include <iostream>
#include <string>
#include <vector>

#include "x2face/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return x2face::run_cli(args, std::cout, std::cerr);
}
