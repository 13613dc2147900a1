#include <malloc.h>

#include "fscil/cli/app.hpp"

int main(int argc, char** argv) {
  // Training allocates many short-lived buffers; keep them off mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return fscil::cli::run_cli(argc, argv);
}
