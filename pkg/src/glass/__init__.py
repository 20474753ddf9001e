"""Self-supervised gaze forecasting with emotion fine-tuning."""

from .errors import (AccumulationError, ConfigError, FormatError, GlassError,
                     InsufficientDataError, NumericError, ParseError, SchemaError, ShapeError)
from .gaze_data import (BehaviorLabel, GazeFrame, GazeSequence, GazeWindow, LabeledWindow,
                        NormStats, SynthConfig, VADLabel, WindowSpec, compute_norm_stats,
                        extract_windows, label_windows, normalize, parse_openface_csv,
                        synth_gaze, upsample_tail)
from .model import (GlassConfig, GlassModel, config_hash, load_checkpoint, patchify,
                    predict_previous, save_checkpoint, unpatchify)
from .pretrain import (AdamW, LossConfig, OptimConfig, PretrainData, SamplingSchedule,
                       gaze_correlation, huber, joint_loss, lr_at, run_pretraining,
                       tf_probability)
from .emotion import (ChunkConfig, build_head, chunk, encoder_features, macro_f1, run_finetune,
                      vad_metrics)
from .baselines import TemporalCNN, fit_baseline, stat_features

__version__ = "0.1.0"
