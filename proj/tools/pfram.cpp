#include <iostream>

#include "pfram/commands.hpp"

int main(int argc, char** argv) { return pfram::cli::run_cli(argc, argv, std::cout, std::cerr); }
