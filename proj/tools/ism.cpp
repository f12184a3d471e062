#include "ism/cli.hpp"

int main(int argc, char** argv) { return ism::cli::run(argc, argv); }
