"""Image IO and resampling.

Images live in memory as ``uint8`` or float arrays of shape (H, W, 3); the CNN
consumes (3, H, W) float tensors. Files are binary PPM (P6).
"""

import numpy as np

from .errors import DataError


def write_ppm(path, img):
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise DataError("PPM writer expects a (H, W, 3) uint8 array")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def _ppm_tokens(buf):
    """Yield header tokens and the offset just past the last one read."""
    pos = 0
    n = len(buf)
    while True:
        while pos < n and (buf[pos:pos + 1].isspace() or buf[pos:pos + 1] == b"#"):
            if buf[pos:pos + 1] == b"#":
                while pos < n and buf[pos:pos + 1] != b"\n":
                    pos += 1
            pos += 1
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace():
            pos += 1
        yield buf[start:pos], pos


def read_ppm(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens = _ppm_tokens(buf)
    try:
        magic, _ = next(tokens)
        w, _ = next(tokens)
        h, _ = next(tokens)
        maxval, end = next(tokens)
        w, h, maxval = int(w), int(h), int(maxval)
    except (StopIteration, ValueError) as exc:
        raise DataError(f"{path}: malformed PPM header") from exc
    if magic != b"P6" or maxval != 255:
        raise DataError(f"{path}: only 8-bit binary PPM (P6) is supported")
    data = buf[end + 1:end + 1 + w * h * 3]
    if len(data) != w * h * 3:
        raise DataError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()


def read_image(path):
    path = str(path)
    if path.lower().endswith(".png"):
        try:
            from PIL import Image
        except ImportError as exc:  # PNG support is optional
            raise DataError("PNG input needs Pillow installed") from exc
        return np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)
    return read_ppm(path)


def grayscale(img):
    img = np.asarray(img, dtype=np.float64)
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def interp_matrix(n_in, n_out, start=0.0, length=None):
    """Rows of linear-interpolation weights mapping ``n_in`` samples to ``n_out``.

    Resamples the span ``[start, start + length)`` of the input axis. When
    shrinking, the triangle kernel is widened by the scale factor so each
    output averages its footprint instead of aliasing.
    """
    if length is None:
        length = n_in - start
    scale = length / n_out
    support = max(scale, 1.0)
    centers = start + (np.arange(n_out) + 0.5) * scale - 0.5
    taps = np.arange(n_in)
    wts = np.maximum(0.0, 1.0 - np.abs(taps[None, :] - centers[:, None]) / support)
    # clamp-to-edge: rows with no support fall back to the nearest pixel
    empty = wts.sum(axis=1) == 0
    if np.any(empty):
        nearest = np.clip(np.rint(centers[empty]).astype(int), 0, n_in - 1)
        wts[np.nonzero(empty)[0], nearest] = 1.0
    return wts / wts.sum(axis=1, keepdims=True)


def resize(img, out_h, out_w):
    """Bilinear (antialiased when shrinking) resize of an (H, W[, C]) array."""
    img = np.asarray(img, dtype=np.float64)
    ay = interp_matrix(img.shape[0], out_h)
    ax = interp_matrix(img.shape[1], out_w)
    if img.ndim == 2:
        return ay @ img @ ax.T
    return np.einsum("yh,hwc,xw->yxc", ay, img, ax, optimize=True)


def crop_resize(img, box, side):
    """Crop ``box = (x0, y0, w, h)`` and resize it anisotropically to side x side."""
    x0, y0, w, h = (int(v) for v in box)
    patch = np.asarray(img, dtype=np.float64)[y0:y0 + h, x0:x0 + w]
    return resize(patch, side, side)


def to_chw(img):
    return np.ascontiguousarray(np.asarray(img).transpose(2, 0, 1))
