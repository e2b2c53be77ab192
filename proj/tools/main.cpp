#include <iostream>

#include "vimed/cli.hpp"

int main(int argc, char** argv) {
  std::ios::sync_with_stdio(false);
  return vimed::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cerr);
}
