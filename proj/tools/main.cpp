// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "gmu/cli.hpp"

int main(int argc, char** argv) {
    return gmu::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
