import os

# Pin BLAS pools before numpy ever loads: the timing assertions in the
# acceptance tests assume single-threaded math, and fixed thread count
# keeps reruns bit-reproducible.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ[_var] = "1"
