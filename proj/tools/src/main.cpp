#include "enlfcn_cli/cli.hpp"

int main(int argc, char** argv) { return enlfcn::cli::run(argc, argv); }
