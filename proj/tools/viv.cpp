#include "viv/cli.hpp"

int main(int argc, char** argv) {
    return viv::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
