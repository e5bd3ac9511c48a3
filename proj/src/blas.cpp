#include "blas.hpp"

namespace kwsrl::nn::blas {

void pin_single_thread()
{
    static const bool pinned = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)pinned;
}

}  // namespace kwsrl::nn::blas
