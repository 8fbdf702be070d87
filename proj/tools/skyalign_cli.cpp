#include "cli_app.hpp"

int main(int argc, char** argv) { return skyalign::cli::run(argc, argv); }
