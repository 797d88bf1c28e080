#include <iostream>
#include <string>
#include <vector>

#include <malloc.h>

#include "cli.hpp"

int main(int argc, char** argv) {
  // Training reallocates multi-megabyte activations every step; keeping them
  // on the heap avoids an mmap/munmap and page-fault storm per layer.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return skna::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
