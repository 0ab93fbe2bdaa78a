#include <iostream>

#include "rise/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return rise::cli::cli_dispatch(args, std::cout, std::cerr);
}
