"""Published baseline results of the multi-person benchmark (all errors in
mm, F1 rounded to two decimals as printed). Used to check that the metric
arithmetic reproduces the derived columns from the raw ones.

Row keys: mpjpe/mve are dicts over B, LH, RH, F, FB (None when not
reported); nmje/nmve over B, FB.
"""

SMPL_METHODS = ('HMR', 'CenterHMR', 'EFT', 'SPIN', 'SPIN-ft')
SMPLX_METHODS = ('SMPLify-X', 'ExPose', 'FrankMocap')


def _row(b, lh, rh, f, fb, vb, vlh, vrh, vf, vfb, nb, nfb, nvb, nvfb, f1):
    return {'mpjpe': {'B': b, 'LH': lh, 'RH': rh, 'F': f, 'FB': fb},
            'mve': {'B': vb, 'LH': vlh, 'RH': vrh, 'F': vf, 'FB': vfb},
            'nmje': {'B': nb, 'FB': nfb}, 'nmve': {'B': nvb, 'FB': nvfb}, 'f1': f1}


N = None
BASELINES = {
    'HMR': _row(180.5, N, N, N, N, 173.6, N, N, N, N, 226.0, N, 217.0, N, 0.80),
    'CenterHMR': _row(168.1, N, N, N, N, 161.4, N, N, N, N, 242.3, N, 233.9, N, 0.69),
    'EFT': _row(165.4, N, N, N, N, 159.0, N, N, N, N, 203.6, N, 196.3, N, 0.81),
    'SPIN': _row(175.1, N, N, N, N, 168.7, N, N, N, N, 223.1, N, 216.3, N, 0.78),
    'SPIN-ft': _row(153.4, N, N, N, N, 148.9, N, N, N, N, 199.2, N, 193.4, N, 0.77),
    'SMPLify-X': _row(182.1, 46.5, 49.6, 52.9, 231.8, 187.0, 48.3, 51.4, 48.9, 236.5,
                      256.5, 326.5, 263.3, 333.1, 0.71),
    'ExPose': _row(150.4, 72.5, 68.8, 55.2, 215.9, 151.5, 74.9, 71.3, 51.1, 217.3,
                   183.4, 263.3, 184.8, 265.0, 0.82),
    'FrankMocap': _row(165.2, 52.3, 53.1, N, N, 168.3, 54.7, 55.7, N, N, 204.0, N, 207.8, N, 0.81),
}

# half a unit in the last printed digit
ROUNDING = 0.05
F1_ROUNDING = 0.005


def fb_cells():
    """(method, family, B, LH, RH, F, printed FB) for every printed FB cell."""
    out = []
    for name, row in BASELINES.items():
        for fam in ('mpjpe', 'mve'):
            r = row[fam]
            if r['FB'] is not None:
                out.append((name, fam, r['B'], r['LH'], r['RH'], r['F'], r['FB']))
    return out


def normalized_cells():
    """(method, raw family, part, raw error, F1, printed normalized value)
    for every printed normalized cell."""
    out = []
    for name, row in BASELINES.items():
        for raw, norm in (('mpjpe', 'nmje'), ('mve', 'nmve')):
            for part in ('B', 'FB'):
                if row[norm][part] is not None:
                    out.append((name, raw, part, row[raw][part], row['f1'], row[norm][part]))
    return out


def f1_interval(raw, printed):
    """Range of unrounded F1 consistent with raw / F1 rounding to ``printed``
    (both raw and printed taken at face value)."""
    return raw / (printed + ROUNDING), raw / (printed - ROUNDING)
