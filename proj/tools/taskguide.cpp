#include <iostream>

#include "taskguide/cli.hpp"

int main(int argc, char** argv) { return taskguide::run_cli(argc, argv, std::cout, std::cerr); }
