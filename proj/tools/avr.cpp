#include <iostream>

#include "avr/cli.hpp"

int main(int argc, char** argv) { return avr::cli::run(argc, argv, std::cout, std::cerr); }
