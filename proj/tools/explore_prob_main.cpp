#include "explore_prob/experiment.hpp"

int main(int argc, char** argv) { return explore_prob::cli::run_cli(argc, argv); }
