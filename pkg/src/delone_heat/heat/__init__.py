# Heat kernels on combinatorial and metric graphs
