from ._avatarforge import (
    DimensionError,
    Error,
    FormatError,
    InvalidArgument,
    IoError,
    NumericalError,
    ProcessError,
    SchemaError,
    StageError,
    color_match,
    gaussian_count,
    load_config,
    load_image,
    load_report,
    load_views,
    make_fixture,
    psnr,
    render_views,
    run_pipeline,
    save_image,
    ssim,
)

__all__ = [name for name in dir() if not name.startswith("_")]
