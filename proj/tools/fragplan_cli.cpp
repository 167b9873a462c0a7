#include <iostream>

#include "fragplan/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return fragplan::run_cli(args, std::cout, std::cerr);
}
