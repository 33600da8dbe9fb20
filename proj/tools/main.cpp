#include "cli.hpp"

int main(int argc, char** argv) { return engage::cli::run(argc, argv); }
