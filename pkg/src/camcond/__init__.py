"""Camera-conditioning preprocessing, toy conditioning blocks and evaluation metrics."""

from .calibration import CalibrationReport, SfmPointSet, calibrate, estimate_scale
from .camera import CameraPose, CameraTrajectory, Extrinsics, Intrinsics, load_trajectory
from .errors import CamcondError, ContractError, FormatError, NumericError, UsageError
from .metrics import ClipSpec, masked_psnr, masked_ssim, new_content_ratio, sample_clip
from .rays import RayImagePair, render_ray_images
from .reprojection import DepthMap, PointCloud, ReprojectedVideo, reproject_sequence

__version__ = "0.1.0"
