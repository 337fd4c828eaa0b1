#include <iostream>

#include "cat/cli/commands.hpp"

int main(int argc, char** argv) { return cat::cli::run(argc, argv, std::cout, std::cerr); }
