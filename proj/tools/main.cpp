#include <iostream>

#include "fewfed/cli.hpp"

int main(int argc, char** argv) { return fewfed::run_cli(argc, argv, std::cout, std::cerr); }
