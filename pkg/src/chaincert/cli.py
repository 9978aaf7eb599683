"""Command line front end: ``chaincert <subcommand> --manifest ... --config ... --out DIR``.

Exit codes: 0 success, 2 usage, 3 malformed container, 4 manifest or config
inconsistency, 5 dimension mismatch, 6 other invalid input, 7 certification
requested with ``--strict`` and some verdict false.
"""

import argparse
from pathlib import Path
import sys

import numpy as np

from . import alignment as al
from .block_energy import from_structure
from .capacity import DEFAULT_ORDER, activation_moments, scale_bounds, width_bounds
from .errors import ChainCertError, ContainerError, DimensionError, ManifestError
from .finetune import frame_rotation_cost, recover_frames, scale_disruption
from .formats import (check_config, load_chain, read_config, read_partition, write_chain, write_config, write_csv,
                      write_json, write_pgm)
from .matrix_core import gauged_svd
from .pipeline import ExtractionProtocol, all_verdicts_true, analyse_chain, emit_report
from .spectral import fit_layer, model_rank_bounds, rank_margins, spectrum_effective_rank
from .synth import FRAME_MODES, NULL_KINDS, SynthChainSpec, gen_power_law_chain, null_chain
from .transport import build_transport

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONTAINER = 3
EXIT_MANIFEST = 4
EXIT_DIMENSION = 5
EXIT_INPUT = 6
EXIT_VERDICT = 7


# ----------------------------------------------------------------------------
# shared loading


def _load(args, need_config=True):
    layers, manifest = load_chain(args.manifest)
    if args.config:
        proto = read_config(args.config, len(layers))
    elif need_config:
        proto = ExtractionProtocol()
    else:
        proto = None
    if proto is not None:
        overrides = {}
        if args.partition:
            parts = [tuple(read_partition(p)) for p in args.partition]
            overrides["row_labels"] = parts[0] if len(parts) == 1 else tuple(parts)
        if args.seed is not None:
            overrides["seed"] = args.seed
        if getattr(args, "baseline", None):
            overrides["baselines"] = tuple(sorted(set(args.baseline)))
        if overrides:
            proto = ExtractionProtocol.from_dict({**proto.to_dict(), **_plain(overrides)})
            check_config(proto, len(layers), args.config or "<command line>")
    return layers, manifest, proto


def _plain(d):
    return {k: ([list(x) if isinstance(x, tuple) else x for x in v] if isinstance(v, tuple) else v)
            for k, v in d.items()}


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _chain(args, align=True):
    layers, manifest, proto = _load(args)
    chain = analyse_chain(layers, proto, manifest.labels, align=align, threads=max(1, args.threads))
    return layers, manifest, proto, chain


# ----------------------------------------------------------------------------
# subcommands


def cmd_fit_spectra(args):
    layers, manifest, proto = _load(args)
    rows = []
    for W in layers:
        svd = gauged_svd(W)
        fit = fit_layer(svd, proto.fit_range)
        rows.append({"label": W.label, "shape": [W.rows, W.cols], "d_sp": svd.spectral_length,
                     "alpha_hat": fit.alpha, "scale": fit.scale, "delta_pl": fit.delta_pl,
                     "chart_error": fit.chart_error, "chart_error_bound": fit.chart_error_bound,
                     "tail_error": fit.tail_error, "fit_range": list(fit.fit_range),
                     "regression_residual": fit.regression_residual,
                     "sigma": svd.sigma[: svd.spectral_length].tolist()})
    write_json(_outdir(args) / "fit_spectra.json", {"protocol": proto.to_dict(), "layers": rows})


def cmd_rank_window(args):
    _, _, proto, chain = _chain(args, align=False)
    rows = []
    for x in chain.layers:
        d = x.svd.spectral_length
        rm = rank_margins(d, x.fit.alpha, proto.eps, x.svd.sigma[:d]) if x.fit.alpha > 0 else None
        bounds = model_rank_bounds(d, x.fit.alpha, proto.eps) if x.fit.alpha > 0.5 else None
        rows.append({"label": x.fit.label, "d_sp": d, "R_eps": x.R_eps,
                     "R_empirical": spectrum_effective_rank(x.svd.sigma[:d], proto.eps),
                     "R_model": rm.R_model if rm else "not measured",
                     "margin": rm.margin if rm else "not measured",
                     "model_bounds": list(bounds) if bounds else "not measured"})
    ifaces = [{"interface": r.index, "lhs": r.rank_check.lhs, "margin": r.rank_check.margin,
               "certified": r.rank_check.certified, "R_model": r.rank_check.R_model,
               "empirical_agree": r.rank_check.empirical_agree} for r in chain.interfaces]
    write_json(_outdir(args) / "rank_window.json", {"protocol": proto.to_dict(), "layers": rows,
                                                     "interfaces": ifaces})


def cmd_transport(args):
    _, _, proto, chain = _chain(args, align=False)
    out = _outdir(args)
    rows = []
    for r in chain.interfaces:
        T = r.transport
        name = f"transport_{r.index:03d}.csv"
        write_csv(out / name, T.entries)
        rows.append({"interface": r.index, "file": name, "variant": T.variant, "rows": T.row_coords,
                     "columns": T.col_coords, "R_source": r.R_source, "R_target": r.R_target,
                     "truncation_error_bound": r.truncation_error, "lambda": r.budget.lam})
    write_json(out / "transport.json", {"protocol": proto.to_dict(), "interfaces": rows})


def _scale_free(chain, r):
    prev, nxt = chain.layers[r.index], chain.layers[r.index + 1]
    variant = "out_ang" if r.transport.row_coords == "physical-output" else "ang"
    embed = prev.svd.matrix.shape[0] != nxt.svd.matrix.shape[1]
    return np.asarray(build_transport(prev.svd, nxt.svd, variant, r.R_source, r.R_target, embed=embed).entries)


def cmd_align(args):
    _, _, proto, chain = _chain(args)
    out = _outdir(args)
    rows = []
    for r in chain.interfaces:
        rec = {"interface": r.index, "reason": r.reason}
        if r.structure is not None:
            st = r.structure
            M = np.asarray(r.transport.entries)
            Ms = _scale_free(chain, r)
            tag = f"{r.index:03d}"
            panels = {"M": al.permute(M, st.row_perm, st.col_perm),
                      "M_s": al.permute(Ms, st.row_perm, st.col_perm),
                      "E_r_M": from_structure(M, st).E, "E_r_M_s": from_structure(Ms, st).E}
            for name, A in panels.items():
                write_csv(out / f"{name}_{tag}.csv", A)
                write_pgm(out / f"{name}_{tag}.pgm", A)
            p = r.margins
            rec.update({"row_groups": [list(g) for g in st.row_groups], "active_sets": [list(c) for c in st.active_sets],
                        "gaps": list(st.gaps), "row_perm": list(st.row_perm), "col_perm": list(st.col_perm),
                        "pairs": [{"i": q.i, "j": q.j, "m": q.m, "o": q.o, "one_third": q.one_third_holds}
                                  for q in p.pairs.values()],
                        "core_norm": r.decomposition.core_norm, "overlap_norm": r.decomposition.overlap_norm,
                        "noise_norm": r.decomposition.noise_norm, "r_cert": r.radius.r_cert,
                        "truncation_error": r.truncation_error,
                        "stable": r.stability.certified, "panels": sorted(f"{n}_{tag}.pgm" for n in panels)})
        rows.append(rec)
    write_json(out / "align.json", {"protocol": proto.to_dict(), "interfaces": rows})


def cmd_block_energy(args):
    _, _, proto, chain = _chain(args)
    out = _outdir(args)
    rows = []
    for r in chain.interfaces:
        if r.energies is None:
            rows.append({"interface": r.index, "reason": r.reason})
            continue
        write_csv(out / f"block_energy_{r.index:03d}.csv", r.energies.E)
        rows.append({"interface": r.index, "E": r.energies.E.tolist(), "row_energies": r.energies.row_energies.tolist(),
                     "off_mass": r.energies.off_mass, "diag_mass": r.energies.diag_mass,
                     "bad_normalized": r.bad.normalized, "bad_energy": r.bad.unnormalized,
                     "bad_chain_holds": r.bad.chain_holds, "H_max": r.screen.H_max,
                     "screen_certified": r.screen.certified,
                     "scores": {f"{i + 1},{j + 1}": v for (i, j), v in sorted(r.screen.scores.items())}})
    write_json(out / "block_energy.json", {"protocol": proto.to_dict(), "interfaces": rows})


def cmd_icm(args):
    _, _, proto, chain = _chain(args)
    rows = []
    for r in chain.interfaces:
        if r.icm is None:
            rows.append({"interface": r.index, "reason": r.reason if r.structure is None else "icm not extracted"})
            continue
        a = r.icm
        rows.append({"interface": r.index, "column_tag": a.column_tag, "hubs": list(a.hubs),
                     "residual_rows": list(a.residual_rows),
                     "noise_support": "not measured" if a.noise_support is None else [list(x) for x in a.noise_support],
                     "groups": [{"group": g.group, "SC": list(g.salient_core), "ST": list(g.structural),
                                 "SA": list(g.auxiliary), "SRS": list(g.receptive_support), "gap_SC": g.gap_core,
                                 "gap_ST": g.gap_structural, "gap_SA": g.gap_auxiliary} for g in a.groups]})
    write_json(_outdir(args) / "icm.json", {"protocol": proto.to_dict(), "interfaces": rows})


def cmd_certify(args):
    layers, manifest, proto, chain = _chain(args, align=not args.no_align)
    rng = np.random.default_rng(proto.seed)
    baselines = {}
    for kind in proto.baselines:
        null = null_chain(layers, kind, rng)
        baselines[kind] = analyse_chain(null, proto, [f"{lab}-{kind}" for lab in manifest.labels],
                                        threads=max(1, args.threads))
    report = emit_report(chain, baselines)
    report["manifest"] = {"labels": list(manifest.labels),
                          "provenance": [dict(e.provenance) for e in manifest.entries]}
    write_json(_outdir(args) / "report.json", report)
    ok = all_verdicts_true(report)
    print(f"certificate: {'all verdicts true' if ok else 'some verdicts false or not measured'}")
    if args.strict and not ok:
        return EXIT_VERDICT
    return EXIT_OK


def cmd_finetune_cost(args):
    base, _ = load_chain(args.manifest)
    post, _ = load_chain(args.post_manifest)
    if len(base) != len(post):
        raise ManifestError(f"{args.post_manifest}: {len(post)} layers, base chain has {len(base)}")
    rows, s, c = [], [], []
    for k, (A, B) in enumerate(zip(base, post)):
        if A.entries.shape != B.entries.shape:
            raise DimensionError(f"layer {k}: base {A.entries.shape} and post {B.entries.shape} differ")
        sa, sb = gauged_svd(A), gauged_svd(B)
        Q_U, Q_V, sp = recover_frames(A, B)
        cost = frame_rotation_cost(sa, Q_U, Q_V, sp)
        c.append(float(sa.sigma[0]))
        s.append(float(sb.sigma[0] / sa.sigma[0]))
        rows.append({"label": A.label, "delta_W": cost.delta_W, "coherent_cost": cost.coherent_cost,
                     "double_sum_cost": cost.double_sum_cost, "relative_rotation_norm": cost.relative_rotation_norm,
                     "relative_rotation_bound": cost.relative_rotation_bound, "uniform_scale": cost.scale,
                     "direct_delta_W": float(np.linalg.norm(B.entries - A.entries))})
    result = {"layers": rows, "scale_statistic": "top singular value"}
    if len(base) >= 2:
        sd = scale_disruption(s, c)
        result["scale"] = {"s": s, "D_log": sd.D_log, "D_ratio": sd.D_ratio, "variance_form": sd.variance_form,
                           "max_log_ratio": sd.max_log_ratio, "log_ratio_bound": sd.log_ratio_bound}
    write_json(_outdir(args) / "finetune_cost.json", result)


def cmd_capacity(args):
    m = activation_moments(args.activation, args.order)
    result = {"activation": m.activation, "order": m.order, "kappa": m.kappa, "chi": m.chi,
              "refinement_gap": m.refinement_gap, "advisory": True}
    if args.depth is not None:
        b = scale_bounds(args.e0, args.s, args.depth, args.growth, args.eta, m)
        result["scale_bounds"] = {"C_typical": b.C_typical, "C_coherent": b.C_coherent,
                                  "C_coherent_first_order": b.C_coherent_asymptotic,
                                  "first_order_relative_error": b.asymptotic_relative_error,
                                  "log_growth_over_depth": b.expansion_parameter}
    ranks = []
    if args.r_out is not None:
        ranks.append(("r_out", args.r_out))
    if args.manifest:
        layers, manifest, proto = _load(args)
        for W in layers:
            svd = gauged_svd(W)
            ranks.append((W.label, spectrum_effective_rank(svd.sigma[: svd.spectral_length], proto.eps)))
    if ranks:
        result["width_bounds"] = []
        for name, r in ranks:
            w = width_bounds(r, m)
            result["width_bounds"].append({"block": name, "r_out": r, "W_min_coherent": w.W_min_coherent,
                                           "W_min_typical": w.W_min_typical, "condition": w.condition})
    write_json(_outdir(args) / "capacity.json", result)


def synth_epsilon(layers, safety=0.5):
    """Energy threshold below every layer's last-mode tail mass, so each window is the full spectrum."""
    tails = []
    for W in layers:
        s = gauged_svd(W).sigma
        s = s[s > 0]
        tails.append(float(s[-1] ** 2 / np.sum(s * s)))
    return safety * min(tails)


def cmd_synth(args):
    alphas = tuple(args.alpha) if len(args.alpha) > 1 else float(args.alpha[0])
    seed = args.seed if args.seed is not None else 0
    spec = SynthChainSpec(d=args.d, L=args.layers, alphas=alphas, seed=seed, frames=args.frames)
    layers = gen_power_law_chain(spec)
    out = _outdir(args)
    prov = {W.label: {"source": "synthetic power-law chain", "d": args.d, "alpha": a, "seed": seed,
                      "frames": args.frames} for W, a in zip(layers, spec.exponents())}
    write_chain(out, layers, provenance=prov)
    proto = ExtractionProtocol(eps=float(f"{synth_epsilon(layers):.3g}"), theta=1e-9, sizes=1, seed=seed,
                               baselines=tuple(sorted(set(args.baseline or ()))))
    write_config(out / "config.json", proto)


# ----------------------------------------------------------------------------
# parser


def _common(p, manifest_required=True):
    p.add_argument("--manifest", required=manifest_required, help="chain manifest JSON")
    p.add_argument("--config", help="extraction protocol JSON (defaults apply when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the protocol seed")
    p.add_argument("--threads", type=int, default=1, help="interfaces analysed in parallel")
    p.add_argument("--partition", action="append", help="row partition file; repeat once per interface")
    p.add_argument("--baseline", action="append", choices=NULL_KINDS, help="null-control chain to analyse too")


def build_parser():
    parser = argparse.ArgumentParser(prog="chaincert", description="Spectral and alignment certificates for layer chains.")
    sub = parser.add_subparsers(dest="command", required=True)
    table = [("fit-spectra", cmd_fit_spectra, "power-law fits and chart errors per layer"),
             ("rank-window", cmd_rank_window, "effective-rank windows and rank-transfer checks"),
             ("transport", cmd_transport, "truncated transport matrices as CSV"),
             ("align", cmd_align, "alignment structures, margins and heatmaps"),
             ("block-energy", cmd_block_energy, "block-energy matrices, bad mass and margin screen"),
             ("certify", cmd_certify, "full certificate report"),
             ("icm", cmd_icm, "channel anatomy labels per group")]
    for name, fn, help_ in table:
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.set_defaults(func=fn)
        if name == "certify":
            p.add_argument("--no-align", action="store_true", help="skip alignment; its entries stay unmeasured")
            p.add_argument("--strict", action="store_true", help=f"exit {EXIT_VERDICT} unless every verdict holds")

    p = sub.add_parser("finetune-cost", help="scale and frame-rotation costs between base and post chains")
    _common(p)
    p.add_argument("--post-manifest", required=True, help="manifest of the adapted chain")
    p.set_defaults(func=cmd_finetune_cost)

    p = sub.add_parser("capacity", help="activation moments with residual-scale and width bounds (advisory)")
    _common(p, manifest_required=False)
    p.add_argument("--activation", default="relu", help="identity, relu, gelu, tanh or swish")
    p.add_argument("--order", type=int, default=DEFAULT_ORDER)
    p.add_argument("--depth", type=int, help="residual depth L; enables the scale bounds")
    p.add_argument("--growth", type=float, default=2.0, help="allowed growth factor M > 1")
    p.add_argument("--e0", type=float, default=1.0)
    p.add_argument("--s", type=float, default=1.0)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--r-out", type=float, help="effective output rank for the width bounds")
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("synth", help="write a synthetic power-law chain, manifest and config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--alpha", type=float, nargs="+", default=[1.0])
    p.add_argument("--frames", choices=FRAME_MODES, default="permutation")
    p.add_argument("--baseline", action="append", choices=NULL_KINDS, help="baselines recorded in the config")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except ContainerError as exc:
        print(f"container error: {exc}", file=sys.stderr)
        return EXIT_CONTAINER
    except ManifestError as exc:
        print(f"manifest/config error: {exc}", file=sys.stderr)
        return EXIT_MANIFEST
    except DimensionError as exc:
        print(f"dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except ChainCertError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return code or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
