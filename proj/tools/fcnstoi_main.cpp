#include "fcnstoi/cli.hpp"

int main(int argc, char** argv) { return fcnstoi::cli::run(argc, argv); }
