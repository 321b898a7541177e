"""Fitting the body model to labelled scans."""

from .config import BLOCKS, FitConfig, virtual_rig
from .energies import (Correspondence, EnergyError, PriorWeights, cloth_energy, correspond,
                       interbeta_energy, landmark_energy, regularizer, skin_energy)
from .fit import (ConvergenceRecord, FitError, FitResult, fit_identity, fit_multiview_init,
                  fit_quality, fit_refine, initial_params, project_landmarks)
from .io import load_fit, save_fit
from .objective import TERMS, Objective
from .quality import cloth_penetration_error, skin_error
from .robust import geman_mcclure
from .scan import LabeledScan, ScanError, load_scan, save_scan
