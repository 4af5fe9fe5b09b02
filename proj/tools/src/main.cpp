#include <iostream>
#include <string>
#include <vector>

#include "memo/cli/commands.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return memo::cli::run(args, std::cout, std::cerr);
}
