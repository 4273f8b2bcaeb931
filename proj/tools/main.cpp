#include "dunet/cli.hpp"

int main(int argc, char** argv) { return dunet::cli::run(argc, argv); }
