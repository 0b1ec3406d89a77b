"""Python access to the compass scalable image codec.

Images are float32 numpy arrays shaped (3, H, W) with values in [0, 1].
"""

from ._compass import (
    DataError,
    DecodeError,
    Model,
    Trainer,
    bd_rate,
    decode,
    encode,
    extract_prefix,
    layer_rd,
    load_image,
    local_grid,
    make_pyramid,
    nearest_correspondence,
    psnr,
    save_image,
    scale_token,
    variant_name,
)

__all__ = [
    "DataError",
    "DecodeError",
    "Model",
    "Trainer",
    "bd_rate",
    "decode",
    "encode",
    "extract_prefix",
    "layer_rd",
    "load_image",
    "local_grid",
    "make_pyramid",
    "nearest_correspondence",
    "psnr",
    "save_image",
    "scale_token",
    "variant_name",
]
