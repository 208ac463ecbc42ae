"""harlens: human-activity-recognition workbench.

Trains small CNN / CNN-LSTM classifiers on 128x9 smartphone sensor windows
with a from-scratch float64 layer engine, visualizes per-layer feature
maps, attributes predictions to sensor columns via occlusion, and boosts
accuracy with a three-model column-subset voting ensemble.
"""

from .data import (ActivityLabel, ChannelStats, LabeledDataset, DatasetError,
                   load_uci_har, synthesize, standardize, select_columns)
from .models import (NetworkConfig, TrainedModel, build_cnn, build_cnn_lstm,
                     train, train_model, predict, evaluate, run_depth_sweep,
                     save_model, load_model)
from .fusion import FusionEnsemble, train_fusion, vote, predict_fusion
from .occlusion import (OcclusionReport, SignificantColumns, occlude_column,
                        occlusion_report, derive_significant_columns)
from .metrics import confusion_matrix, accuracy, macro_f1, compare_report
from .introspect import FeatureMap, feature_maps, render_heatmap

__version__ = "0.1.0"
