import numpy as np
from sklearn.utils import check_array


def check_images(X, image_shape=None, min_samples: int = 1) -> np.ndarray:
    """Validate an image stack, returning float32 ``(n, C, H, W)``.

    Flat ``(n, C*H*W)`` input is accepted when ``image_shape`` is given.
    """
    X = check_array(X, allow_nd=True, dtype=np.float32, ensure_min_samples=min_samples, ensure_all_finite=True)
    if X.ndim == 2:
        if image_shape is None:
            raise ValueError("flat input needs image_shape=(C, H, W)")
        X = X.reshape((len(X),) + tuple(image_shape))
    if X.ndim != 4:
        raise ValueError(f"expected images shaped (n, C, H, W), got {X.shape}")
    if image_shape is not None and X.shape[1:] != tuple(image_shape):
        raise ValueError(f"image shape {X.shape[1:]} != expected {tuple(image_shape)}")
    return X


def check_features(X, n_features=None) -> np.ndarray:
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, expected {n_features}")
    return X
