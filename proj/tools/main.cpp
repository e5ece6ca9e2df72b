#include "kpdiff/cli.hpp"

int main(int argc, char** argv) { return kpdiff::cli::dispatch(argc, argv); }
