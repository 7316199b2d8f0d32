#include <string>
#include <vector>

#include "kneedet/cli.hpp"

int main(int argc, char** argv) {
  return kneedet::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
