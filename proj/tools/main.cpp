#include <iostream>
#include <string>
#include <vector>

#include "x3d/harness.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return x3d::run_cli(std::move(args), std::cout, std::cerr);
}
