#include <iostream>
#include <string>
#include <vector>

#include "evicode/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return evicode::cli::run(args, std::cout, std::cerr);
}
