"""Multi-person evaluation: matching, per-part errors, detection-normalized
errors and binned analyses."""

from .analysis import (BINNINGS, OCCLUSION_EDGES, YAW_EDGES, BinRow, binned_analysis, center_distance,
                       center_edges, occlusion_percent, yaw_degrees)
from .evaluate import EvalReport, evaluate, person_errors
from .io import (SubmissionError, format_submission, load_corpus, load_scene, parse_submission,
                 read_submission, write_submission)
from .matching import DEFAULT_TAU, assign, cost_matrices, match
from .metrics import (PARTS, PartLayout, detection_scores, fb_error, normalized_errors, part_mpjpe,
                      part_mve, scores_from_counts)
from .report import read_summary, write_report
from .types import (B_ONLY, BFH, ContractError, MatchOutcome, PersonTruth, PredPerson, SceneTruth,
                    ScenePrediction)
