import numpy as np

# H x W x 3 float array in [0, 1]
Image = np.ndarray
# N x h x w int array of codebook indices
TokenGrid = np.ndarray
