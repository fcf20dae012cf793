#include "fusionbench/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return fusionbench::run_cli(argc, argv, std::cout, std::cerr);
}
