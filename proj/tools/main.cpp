#include <iostream>

#include "cli.hpp"
#include "uqrecon/harness.hpp"

int main(int argc, char** argv) {
  uqr::tune_process_allocator();
  std::vector<std::string> args(argv + 1, argv + argc);
  return uqr::run_cli(args, std::cout, std::cerr);
}
