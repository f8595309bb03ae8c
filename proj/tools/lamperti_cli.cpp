#include <iostream>

#include "lamperti/cli.hpp"

int main(int argc, char** argv) { return lamperti::cli::run(argc, argv, std::cout, std::cerr); }
