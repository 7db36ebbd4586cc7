#include "cift/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return cift::command_dispatch(argc, argv, std::cout, std::cerr); }
