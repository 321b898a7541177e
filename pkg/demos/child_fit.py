"""Fit a child scan: the template is a blend of the adult and child
templates, and the blend weight alpha is estimated with the pose and shape."""

import argparse

from scanbench import interpolate_template, make_toy_model
from scanbench.fitting import FitConfig, fit_identity
from scanbench.synth import GenSpec, gen_scan_set


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument('--alpha', type=float, default=0.3, help='true blend weight (0 child, 1 adult)')
    ap.add_argument('--seed', type=int, default=303)
    args = ap.parse_args()

    model = make_toy_model(0)
    for a in (0.0, 0.5, 1.0):
        T = interpolate_template(model, a)
        print(f'alpha {a:.1f}: template height {T[:, 1].max() - T[:, 1].min():.3f} m')

    item = gen_scan_set(model, GenSpec(seed=args.seed, clothed_prob=0.0), n_scans=1, clothed=False,
                        child=True, alpha=args.alpha)[0]
    res = fit_identity(model, [item['scan']], FitConfig(), [item['detections']], [item['cameras']])
    p = res.params[0]
    print(f'\ntrue alpha {args.alpha:.3f}, recovered {p.alpha:.4f}; '
          f'skin error {res.quality[0]["skin_error_mm"]:.3f} mm')


if __name__ == '__main__':
    main()
