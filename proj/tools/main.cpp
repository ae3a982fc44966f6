#include <iostream>
#include <string>
#include <vector>

#include "zhoi/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return zhoi::run_cli(args, std::cout, std::cerr);
}
