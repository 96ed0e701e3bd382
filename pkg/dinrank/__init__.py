from dinrank._version import __version__
from dinrank.errors import ShapeError, DegenerateRowError, UninitializedStatisticsError, ConfigError, \
    RankingParseError, BudgetExceededError, DivergenceError, CheckpointError, DataError
from dinrank.numeric import Matrix, Tape, ParamStore, BatchNormState, backward
from dinrank.data import RankedQuery, ListBatch, FeatureStats, parse_ranking_file, write_ranking_file, \
    filter_no_relevant, truncate_lists, fit_feature_stats, apply_normalization, make_batches, fold_paths
from dinrank.layers import DenseBlockSpec, AttentionBlockSpec
from dinrank.scorers import ScorerSpec, ScoreVector, init_params, param_count, score, \
    score_univariate, score_gsf, score_attn_din
from dinrank.losses import LossSpec, softmax_ce_loss, approx_rank, approx_ndcg_loss
from dinrank.metrics import MetricReport, ndcg_at_k, mrr, arp, evaluate_lists, compare_reports
from dinrank.checkpoint import Checkpoint, save_checkpoint, load_checkpoint
from dinrank.training import TrainConfig, adagrad_step, train, evaluate, predict, make_synthetic_max_task
from dinrank.config import RunConfig, load_run_config, write_run_config
from dinrank.util import make_rng, num2str
