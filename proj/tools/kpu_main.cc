#include <iostream>
#include <string>
#include <vector>

#include "kpu/frontend.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return kpu::run_cli(args, std::cout, std::cerr);
}
