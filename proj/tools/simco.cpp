#include "simco/cli.hpp"

int main(int argc, char** argv) { return simco::cli::run(argc, argv); }
