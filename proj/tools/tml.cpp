#include <iostream>

#include "tml/cli.hpp"

int main(int argc, char** argv) { return tml::run_cli(argc, argv, std::cout, std::cerr); }
