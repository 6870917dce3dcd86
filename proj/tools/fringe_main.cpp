#include <string>
#include <vector>

#include "fringe/cli.hpp"

int main(int argc, char** argv) {
  return fringe::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
