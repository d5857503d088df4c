#include <string>
#include <vector>

#include "detrame/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return detrame::cli::run_command(args);
}
