#include <iostream>

#include "ichseq/app.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return ichseq::run_cli(args, std::cout, std::cerr);
}
