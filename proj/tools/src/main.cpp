#include <iostream>

#include "nacforge/cli/commands.hpp"

int main(int argc, char** argv) { return nac::cli::run_cli(argc, argv, std::cout, std::cerr); }
