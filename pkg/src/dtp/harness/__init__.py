from .config import ConfigError, TrainConfig, config_from_dict, load_config
from .datasets import Dataset, DatasetParseError, make_dataset, read_csv, write_csv
from .trainer import (MetricsRecord, TrainingAborted, dataset_mse, run_training,
                      train, train_step, write_metrics)
from .experiments import KINDS, ExperimentReport, run_experiment
from .serialization import NetworkFormatError, load_network, save_network
