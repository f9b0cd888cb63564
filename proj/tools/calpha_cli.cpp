#include <iostream>

#include "calpha/cli/commands.hpp"

int main(int argc, char** argv) { return calpha::cli::run_cli(argc, argv, std::cout, std::cerr); }
