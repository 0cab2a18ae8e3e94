#include <iostream>

#include "pasrec/cli.hpp"

extern char** environ;

int main(int argc, char** argv) { return pasrec::cli::main(argc, argv, environ, std::cout, std::cerr); }
