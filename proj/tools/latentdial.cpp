#include "latentdial/cli.hpp"

int main(int argc, char** argv) {
  return latentdial::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
