#include <iostream>
#include <string>
#include <vector>

#include "ma3e/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return ma3e::cli::run(args, std::cout, std::cerr);
}
