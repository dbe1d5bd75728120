import os

# Pin BLAS to one thread before numpy loads anywhere: the byte-exact
# reproducibility tests compare metric streams across runs.
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
