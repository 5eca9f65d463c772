#include "fwrl/cli.hpp"

int main(int argc, char** argv) { return fwrl::cli::dispatch(argc, argv); }
