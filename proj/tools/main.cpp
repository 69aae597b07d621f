// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "m3/cli.hpp"

int main(int argc, char** argv) { return m3::cli::run(argc, argv, std::cout, std::cerr); }
