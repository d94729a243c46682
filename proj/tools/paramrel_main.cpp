#include "paramrel/cli.hpp"

int main(int argc, char** argv) { return paramrel::cli::run(argc, argv); }
