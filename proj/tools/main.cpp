#include <iostream>

#include "rada_cli.hpp"

int main(int argc, char** argv) { return rada::cli::dispatch(argc, argv, std::cout, std::cerr); }
