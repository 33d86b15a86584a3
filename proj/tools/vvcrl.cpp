#include <iostream>

#include "vvcrl/cli.hpp"

int main(int argc, char** argv) { return vvcrl::cli::run(argc, argv, std::cout, std::cerr); }
