#include <iostream>

#include "bayesadapt/cli.hpp"

int main(int argc, char** argv) { return bayesadapt::cli_main(argc, argv, std::cout, std::cerr); }
