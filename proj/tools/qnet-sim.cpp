#include <iostream>

#include "qnet/cli/app.hpp"

int main(int argc, char** argv) { return qnet::cli::run_cli(argc, argv, std::cout, std::cerr); }
