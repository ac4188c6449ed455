// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "kopt/cli.hpp"

int main(int argc, char** argv) { return kopt::run_cli(argc, argv, std::cout, std::cerr); }
