#include "latact/pipeline.hpp"

int main(int argc, char** argv) { return latact::cli_dispatch(argc, argv); }
