#include <iostream>

#include "cloudrm/cli.hpp"

int main(int argc, char** argv) { return cloudrm::cli::run_cli(argc, argv, std::cout, std::cerr); }
