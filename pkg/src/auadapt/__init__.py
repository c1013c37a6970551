"""AU-guided cross-domain expression classification toolkit."""

from .annotate import (Annotation, annotate_datasets, combine_annotations, read_annotations,
                       s_hard_assign, t_hard_assign, t_soft_assign, write_annotations)
from .au_index import (AuIndex, au_class_distribution, au_similarity, binarize, build_index,
                       query_exact)
from .dataset import (Dataset, DatasetError, Dims, Sample, load_dataset, make_sample,
                      save_dataset, split, strip_hidden_labels)
from .experiments import (METHODS, MethodResult, PipelineConfig, PipelineError, run_baseline,
                          run_pipeline, run_sweep)
from .model import (AdamState, Batch, HeadGrads, HeadParams, Metrics, TrainConfig, TrainHistory,
                    adam_step, backward, ce_loss, evaluate, forward, init_head, kl_loss,
                    load_params, lr_at, predict_probs, save_params, total_loss, train,
                    triplet_loss)
from .synth import SynthConfig, SynthMeta, describe, generate
from .triplets import (MiningConfig, Triplet, TripletReport, hard_negative_pool, mine_triplets,
                       read_triplets, validate_triplets, write_triplets)

__version__ = "0.1.0"
