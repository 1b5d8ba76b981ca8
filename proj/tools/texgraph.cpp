#include <iostream>

#include "texgraph/cli.hpp"

int main(int argc, char** argv) { return texgraph::cli::run(argc, argv, std::cout, std::cerr); }
