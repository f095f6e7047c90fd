#include <iostream>

#include "glyphsim/pipeline.hpp"

int main(int argc, char** argv) { return glyphsim::pipeline::run_cli(argc, argv, std::cout, std::cerr); }
