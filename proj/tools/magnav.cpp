#include <iostream>

#include "magnav/cli.hpp"

int main(int argc, char** argv) { return magnav::run_cli(argc, argv, std::cout, std::cerr); }
