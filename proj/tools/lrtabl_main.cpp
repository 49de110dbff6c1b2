#include <iostream>
#include <string>
#include <vector>

#include "lrtabl/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return lrtabl::cli::run(args, std::cout, std::cerr);
}
