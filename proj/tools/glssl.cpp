#include <iostream>

#include "glssl/cli.hpp"

int main(int argc, char** argv) { return glssl::cli::run(argc, argv, std::cout, std::cerr); }
