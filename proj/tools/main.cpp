#include "astropretext/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return astropretext::cli::run(argc, argv, std::cout, std::cerr); }
