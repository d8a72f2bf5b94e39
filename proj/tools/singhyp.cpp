#include "singhyp/cli.hpp"

int main(int argc, char** argv) { return singhyp::cli::main(argc, argv); }
