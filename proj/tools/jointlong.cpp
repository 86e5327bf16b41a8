#include <iostream>
#include <string>
#include <vector>

#include "jointlong/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return jointlong::run_cli(args, std::cout, std::cerr);
}
