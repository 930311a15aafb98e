#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "petd/experiments.hpp"

int main(int argc, char** argv) {
    std::cout << "petd placeholder\n";
    return 0;
}
