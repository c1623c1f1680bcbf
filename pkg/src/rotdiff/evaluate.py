"""Rotation-sweep evaluation and report emission.

A sweep runs one trained model over every test image of a dataset,
groups PSNR by rotation angle, and condenses the angle profile into a
single number: the variance of the per-angle mean PSNR values.  A
rotation-invariant model has a flat profile and a variance near zero.
Variance is computed on the dB values directly (so its unit is dB^2,
reported under a ``_db`` column name; the convention of the numbers we
compare against).

Reports serialize to CSV with a fixed layout::

    # model <name> hash <config-hash> checkpoint <id> excluded <n>
    model,angle_deg,mean_psnr_db
    iso,5,24.18...
    model,variance_db
    iso,0.012...

``parse_report`` inverts ``emit_report`` exactly (floats are written
with repr).  Next to the CSV a gnuplot-ready ``.dat`` twin is written,
one block per model, for plotting PSNR against angle.
"""

import os
from dataclasses import dataclass

import numpy as np

from .blocks import NumericalBlowupError, evolve
from .dataset import load_pairs, psnr, read_manifest
from .pgm import read_pgm, write_pgm
from .training import block_config, config_hash, load_checkpoint, softplus

__all__ = [
    "SweepReport",
    "evaluate_sweep",
    "baseline_sweep",
    "merge_reports",
    "variance_db",
    "emit_report",
    "parse_report",
    "denoise",
]


@dataclass(frozen=True)
class SweepReport:
    """Per-(model, angle) mean PSNR plus per-model variance and provenance.

    rows:      tuple of (model, angle_deg, mean_psnr_db)
    variances: tuple of (model, variance_db)
    metadata:  tuple of (model, config_hash, checkpoint_id, excluded)
    """

    rows: tuple
    variances: tuple
    metadata: tuple

    def angles(self, model):
        return tuple(angle for m, angle, _ in self.rows if m == model)

    def mean_psnr(self, model, angle):
        for m, a, value in self.rows:
            if m == model and a == angle:
                return value
        raise KeyError(f"no row for model {model!r} at angle {angle:g}")

    def variance(self, model):
        for m, value in self.variances:
            if m == model:
                return value
        raise KeyError(f"no variance entry for model {model!r}")

    def models(self):
        seen = []
        for m, _, _ in self.rows:
            if m not in seen:
                seen.append(m)
        return tuple(seen)


def variance_db(values):
    """Population variance of the dB values, checked non-negative."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("variance of an empty profile")
    var = float(np.var(values))
    return max(var, 0.0)


def _sorted_rows(rows):
    return tuple(sorted(rows, key=lambda r: (r[0], r[1])))


def _evolve_or_exclude(bc, steps, clean, noisy, angle):
    """Per-angle PSNR list; divergent images are dropped, not fatal."""
    excluded = 0
    try:
        out = evolve(bc, noisy, steps)
        values = [psnr(out[i], clean[i]) for i in range(clean.shape[0])]
    except NumericalBlowupError:
        values = []
        last = None
        for i in range(clean.shape[0]):
            try:
                out_i = evolve(bc, noisy[i], steps)
                values.append(psnr(out_i, clean[i]))
            except NumericalBlowupError as err:
                last = err
                excluded += 1
        if not values:
            err = NumericalBlowupError(last.max_update, last.step)
            err.args = (f"every test image at angle {angle:g} diverged ({err.args[0]})",)
            raise err from None
    return values, excluded


def evaluate_sweep(ckpt_path, manifest_path, model=None):
    """Sweep one checkpoint over the manifest's test records.

    Test images are grouped by rotation angle; each group is evolved as
    one batch (falling back to per-image evolution when the batch blows
    up, so a single divergent image only excludes itself).  The report
    is deterministic and independent of grouping order.
    """
    ck = load_checkpoint(ckpt_path)
    records = [r for r in read_manifest(manifest_path) if r.role == "test"]
    if not records:
        raise ValueError(f"{manifest_path}: no test records")
    name = model or ck.cfg.label or ck.cfg.variant
    tau = softplus(ck.params[0])
    bc = None if tau == 0.0 else block_config(ck.cfg, ck.params)

    rows = []
    excluded_total = 0
    for angle in sorted({r.angle for r in records}):
        group = [r for r in records if r.angle == angle]
        clean, noisy = load_pairs(group)
        if bc is None:
            values = [psnr(noisy[i], clean[i]) for i in range(clean.shape[0])]
            excluded = 0
        else:
            values, excluded = _evolve_or_exclude(bc, ck.cfg.steps, clean, noisy, angle)
        excluded_total += excluded
        rows.append((name, float(angle), float(np.mean(values))))

    var = variance_db([r[2] for r in rows])
    ckpt_id = ck.cfg.label or os.path.basename(str(ckpt_path))
    return SweepReport(
        rows=_sorted_rows(rows),
        variances=((name, var),),
        metadata=((name, config_hash(ck.cfg), ckpt_id, excluded_total),),
    )


def baseline_sweep(manifest_path, model="noisy"):
    """PSNR of the noisy test images themselves (the do-nothing model)."""
    records = [r for r in read_manifest(manifest_path) if r.role == "test"]
    if not records:
        raise ValueError(f"{manifest_path}: no test records")
    rows = []
    for angle in sorted({r.angle for r in records}):
        group = [r for r in records if r.angle == angle]
        clean, noisy = load_pairs(group)
        values = [psnr(noisy[i], clean[i]) for i in range(clean.shape[0])]
        rows.append((model, float(angle), float(np.mean(values))))
    var = variance_db([r[2] for r in rows])
    return SweepReport(
        rows=_sorted_rows(rows),
        variances=((model, var),),
        metadata=((model, "none", "none", 0),),
    )


def merge_reports(reports):
    """Combine single-model reports; output order is (model, angle) ascending."""
    rows, variances, metadata = [], [], []
    for rep in reports:
        rows.extend(rep.rows)
        variances.extend(rep.variances)
        metadata.extend(rep.metadata)
    models = [m for m, _ in variances]
    if len(set(models)) != len(models):
        raise ValueError(f"duplicate model names across reports: {models}")
    key = lambda entry: entry[0]
    return SweepReport(
        rows=_sorted_rows(rows),
        variances=tuple(sorted(variances, key=key)),
        metadata=tuple(sorted(metadata, key=key)),
    )


def emit_report(report, path):
    """Write the CSV (and its gnuplot twin, ``<path minus suffix>.dat``)."""
    lines = []
    for model, hash_hex, ckpt_id, excluded in report.metadata:
        lines.append(f"# model {model} hash {hash_hex} checkpoint {ckpt_id} excluded {excluded}")
    lines.append("model,angle_deg,mean_psnr_db")
    for model, angle, value in report.rows:
        lines.append(f"{model},{angle:g},{repr(value)}")
    if report.variances:
        lines.append("model,variance_db")
        for model, var in report.variances:
            lines.append(f"{model},{repr(var)}")
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)

    dat_path = os.path.splitext(str(path))[0] + ".dat"
    blocks = []
    for model in report.models():
        entries = [(a, v) for m, a, v in report.rows if m == model]
        block = [f"# model: {model}", "# angle_deg  mean_psnr_db"]
        block += [f"{angle:g} {repr(value)}" for angle, value in entries]
        blocks.append("\n".join(block))
    with open(dat_path, "w", encoding="utf-8") as fh:
        fh.write("\n\n".join(blocks) + ("\n" if blocks else ""))


def parse_report(path):
    """Inverse of :func:`emit_report` for the CSV file."""
    rows, variances, metadata = [], [], []
    section = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line.split()
                if len(parts) == 9 and parts[1] == "model" and parts[3] == "hash":
                    metadata.append((parts[2], parts[4], parts[6], int(parts[8])))
                continue
            if line == "model,angle_deg,mean_psnr_db":
                section = "rows"
                continue
            if line == "model,variance_db":
                section = "variances"
                continue
            parts = line.split(",")
            if section == "rows" and len(parts) == 3:
                rows.append((parts[0], float(parts[1]), float(parts[2])))
            elif section == "variances" and len(parts) == 2:
                variances.append((parts[0], float(parts[1])))
            else:
                raise ValueError(f"{path}:{lineno}: unparseable report line {line!r}")
    if section is None:
        raise ValueError(f"{path}: missing report header")
    return SweepReport(rows=tuple(rows), variances=tuple(variances), metadata=tuple(metadata))


def denoise(ckpt_path, in_path, out_path):
    """Apply a trained model to one PGM image and write the result.

    The output is clamped to [0, 255] by the 8-bit format.
    """
    ck = load_checkpoint(ckpt_path)
    img = read_pgm(in_path)
    tau = softplus(ck.params[0])
    if tau == 0.0:
        out = img
    else:
        out = evolve(block_config(ck.cfg, ck.params), img, ck.cfg.steps)
    write_pgm(out_path, out)
