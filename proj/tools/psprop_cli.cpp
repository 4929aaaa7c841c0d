#include "psprop/cli.hpp"

int main(int argc, char** argv) { return psprop::run_cli(argc, argv); }
