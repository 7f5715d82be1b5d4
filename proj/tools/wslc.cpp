#include <iostream>
#include <string>
#include <vector>

#include "wslc/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return wslc::run_command(args, std::cout, std::cerr);
}
