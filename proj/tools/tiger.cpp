#include "tiger/cli.hpp"

int main(int argc, char** argv) { return tiger::cli::run(argc, argv); }
