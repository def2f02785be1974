#include <iostream>

#include "trajguard/pipeline.hpp"

int main(int argc, char** argv) { return trajguard::run_cli(argc, argv, std::cout, std::cerr); }
