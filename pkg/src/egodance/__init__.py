"""Music- and egocentric-video-conditioned dance generation with skeleton state-space diffusion."""
from .container import read_container, write_container
from .diffusion import DiffusionSchedule, GuidanceConfig, guided_sample, q_sample, sample
from .errors import ConfigurationError, EgoDanceError, NumericFailure, ValidationError
from .kinematics import HeadTrajectory, extract_head, forward_kinematics
from .losses import LossWeights, alignment_loss, kinematic_loss, total_loss
from .network import EgoMusicModel, ModelConfig, SkeletonDenoiser
from .skeleton import MotionSequence, SkeletonTopology, load_topology, pack_motion, unpack_motion
from .ssd import SsdParams, ssd_scan, ssd_scan_dual, ssd_scan_recurrent
from .synth import SynthSpec, build_dataset, generate_sequence

__version__ = "0.1.0"
