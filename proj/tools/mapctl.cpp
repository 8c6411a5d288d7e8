#include <iostream>

#include "mapctl/cli.hpp"

int main(int argc, char** argv) { return mapctl::cli_dispatch(argc, argv, std::cout, std::cerr); }
