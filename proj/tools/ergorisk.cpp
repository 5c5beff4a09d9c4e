#include <iostream>

#include "ergorisk/cli.hpp"

int main(int argc, char** argv) { return ergorisk::cli::run(argc, argv, std::cout, std::cerr); }
