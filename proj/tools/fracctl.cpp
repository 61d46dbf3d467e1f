#include "fracctl/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return fracctl::cli::run(argc, argv, std::cout, std::cerr); }
