#include "cupid/cli.hpp"

int main(int argc, char** argv) {
    return cupid::cli::main_entry(argc, argv);
}
