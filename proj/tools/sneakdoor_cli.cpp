#include "sneakdoor/commands.hpp"

int main(int argc, char** argv) { return sneakdoor::cli::run_cli(argc, argv); }
