#include <iostream>

#include "mmem/cli/cli.hpp"

int main(int argc, char** argv) { return mmem::cli::run(argc, argv, std::cout, std::cerr); }
