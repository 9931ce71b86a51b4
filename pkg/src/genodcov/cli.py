"""Command-line front end.

Subcommands: ``scan``, ``epistasis``, ``categorical``, ``gof``, ``simulate``
and ``bench``. Settings come from flags, then a ``key=value`` config file
(``--config``), then built-in defaults. Progress goes to stderr; stdout
carries ``key=value`` summaries.

Exit codes: 0 success, 2 configuration error, 3 input I/O error, 4 data
format error, 5 output error.
"""

import argparse
import collections
import os
import sys
import time

import numpy as np

from . import __version__
from . import assoc, categorical, epistasis, plink, simulate
from .geno_model import SnpDistance

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4
EXIT_OUTPUT = 5

GWAS_THRESHOLD = 5e-8


class ConfigError(Exception):
    pass


class OutputError(Exception):
    pass


def _floats(text):
    return [float(t) for t in str(text).replace(",", " ").split()]


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


DEFAULTS = {
    "common": {"seed": 0, "workers": None, "out": None},
    "scan": {
        "bfile": None, "dosage": None, "pheno": None, "pheno_name": None, "covar": None,
        "covar_names": None, "b": 2.0, "M": 1e-4, "m": 1e-64, "screen": True,
        "method": "auto", "flip": False, "qc": False, "maf_min": 0.01,
        "hwe_alpha": 0.001, "call_rate_min": 0.95, "block_size": 512,
    },
    "epistasis": {
        "bfile": None, "pheno": None, "pheno_name": None, "metric": "discrete",
        "q": 0.05, "min_distance": 1e6,
    },
    "categorical": {"table": None, "permutations": 0},
    "gof": {"counts": None, "probs": None, "hwe": None},
    "simulate": {
        "design": "typeI", "replicates": 1000, "n": 300, "maf": [0.1, 0.2, 0.3, 0.4, 0.5],
        "b_grid": [2.0, 3.0], "h": [0.0, 0.5, 1.0], "beta": 1.0, "eps": [0.0], "rows": 5,
        "cols": 8, "model": "2S", "param": [0.0], "interaction": "qexp",
    },
    "bench": {"n_snps": 100000, "n": 8000, "naive": True, "b": 2.0, "block_size": 512},
}


def _add_common(p):
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="worker processes (default GENODCOV_WORKERS or 1)")
    p.add_argument("--out", help="output file (written atomically)")


def build_parser():
    parser = argparse.ArgumentParser(prog="genodcov", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    p = sub.add_parser("scan", help="genome-wide association scan", argument_default=S)
    _add_common(p)
    p.add_argument("--bfile", help="PLINK file stem")
    p.add_argument("--dosage", help="dosage table (FID IID snp...) instead of --bfile")
    p.add_argument("--pheno", help="phenotype table (FID IID value...)")
    p.add_argument("--pheno-name", dest="pheno_name")
    p.add_argument("--covar", help="covariate table; an intercept is added")
    p.add_argument("--covar-names", dest="covar_names", help="comma-separated subset")
    p.add_argument("--b", type=float)
    p.add_argument("--M", type=float, help="screening threshold on the lower bound")
    p.add_argument("--m", type=float, help="screening threshold on the upper bound")
    p.add_argument("--no-screen", dest="screen", action="store_false")
    p.add_argument("--method", choices=["auto", "finite", "asymptotic"])
    p.add_argument("--flip", action="store_true", help="count allele 2 instead of allele 1")
    p.add_argument("--qc", action="store_true", help="apply MAF, call-rate and HWE filters")
    p.add_argument("--maf-min", dest="maf_min", type=float)
    p.add_argument("--hwe-alpha", dest="hwe_alpha", type=float)
    p.add_argument("--call-rate-min", dest="call_rate_min", type=float)
    p.add_argument("--block-size", dest="block_size", type=int)

    p = sub.add_parser("epistasis", help="pairwise SNP dependence in cases and controls", argument_default=S)
    _add_common(p)
    p.add_argument("--bfile")
    p.add_argument("--pheno", help="case/control table coded 1/2 or 0/1")
    p.add_argument("--pheno-name", dest="pheno_name")
    p.add_argument("--metric", help="discrete, euclidean, dominant, recessive, heterozygous or db:<b>")
    p.add_argument("--q", type=float, help="FDR level")
    p.add_argument("--min-distance", dest="min_distance", type=float, help="bp between same-chromosome SNPs")

    p = sub.add_parser("categorical", help="independence tests on a contingency table", argument_default=S)
    _add_common(p)
    p.add_argument("--table", help="delimited counts grid; a label row and column are skipped")
    p.add_argument("--permutations", type=int, help="also report a Patefield permutation p-value")

    p = sub.add_parser("gof", help="goodness of fit of counts to a multinomial law", argument_default=S)
    _add_common(p)
    p.add_argument("--counts", type=_floats, help="comma-separated counts")
    p.add_argument("--probs", type=_floats, help="comma-separated null probabilities")
    p.add_argument("--hwe", type=_floats, help="allele frequencies; null is Hardy-Weinberg")

    p = sub.add_parser("simulate", help="replicate-level simulation tables", argument_default=S)
    _add_common(p)
    p.add_argument("--design", choices=["typeI", "power", "categorical", "hwe", "epistasis"])
    p.add_argument("--replicates", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--maf", type=_floats)
    p.add_argument("--b-grid", dest="b_grid", type=_floats)
    p.add_argument("--h", type=_floats)
    p.add_argument("--beta", type=float)
    p.add_argument("--eps", type=_floats)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--model", choices=["2S", "2K", "3S", "3K"])
    p.add_argument("--param", type=_floats, help="model parameters (e, g, s or k)")
    p.add_argument("--interaction", choices=["qexp", "qmult"])

    p = sub.add_parser("bench", help="time screened and naive scans on null data", argument_default=S)
    _add_common(p)
    p.add_argument("--n-snps", dest="n_snps", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--b", type=float)
    p.add_argument("--no-naive", dest="naive", action="store_false")
    p.add_argument("--block-size", dest="block_size", type=int)
    return parser


def _converters(parser, command):
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    conv = {}
    for a in sub.choices[command]._actions:
        if a.dest in ("help", "config"):
            continue
        if isinstance(a, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            conv[a.dest] = _bool
        else:
            conv[a.dest] = a.type or str
    return conv


def read_config(path):
    """Parse a flat ``key=value`` file; ``#`` starts a comment and dashes equal underscores."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                k, v = line.split("=", 1)
                out[k.strip().replace("-", "_")] = v.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return out


def resolve(argv=None):
    """Parse ``argv`` into a settings mapping (flags > config > defaults)."""
    parser = build_parser()
    ns = vars(parser.parse_args(argv))
    command = ns.pop("command")
    cfg = dict(DEFAULTS["common"])
    cfg.update(DEFAULTS[command])
    conv = _converters(parser, command)
    if "config" in ns:
        for k, v in read_config(ns.pop("config")).items():
            if k not in conv:
                raise ConfigError(f"unknown config key {k!r} for {command}")
            try:
                cfg[k] = conv[k](v)
            except (TypeError, ValueError):
                raise ConfigError(f"bad value for {k}: {v!r}") from None
    cfg.update(ns)
    cfg["command"] = command
    return cfg


def _progress(label):
    def report(done, total):
        print(f"{label}: {done}/{total}", file=sys.stderr, flush=True)

    return report


def _need(cfg, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise ConfigError(f"--{k.replace('_', '-')} is required for {cfg['command']}")


def _need_file(path, what):
    if not os.path.exists(path):
        raise ConfigError(f"{what} not found: {path}")


def _summary(**kw):
    print(" ".join(f"{k}={v}" for k, v in kw.items()))


def _write_text(path, lines):
    try:
        with plink.atomic_write(path, encoding="utf-8", newline="") as fh:
            for line in lines:
                fh.write(line + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from None


def _fmt(x):
    return format(float(x), ".17g")


def _pheno_column(table, name, path):
    if name is None:
        return table.column()
    if name not in table.columns:
        raise ConfigError(f"column {name!r} not in {path}")
    return table.column(name)


def run_scan(cfg):
    _need(cfg, "pheno", "out")
    if (cfg["bfile"] is None) == (cfg["dosage"] is None):
        raise ConfigError("give exactly one of --bfile and --dosage")
    _need_file(cfg["pheno"], "phenotype file")
    if cfg["covar"] is not None:
        _need_file(cfg["covar"], "covariate file")
    if not 0.0 <= cfg["b"] <= 4.0:
        raise ConfigError("b must lie in [0, 4]")
    if cfg["bfile"] is not None:
        for ext in (".bed", ".bim", ".fam"):
            _need_file(cfg["bfile"] + ext, "PLINK file")
        data = plink.read_plink_triplet(cfg["bfile"], flip=cfg["flip"])
        samples = data.samples
        variants = data.variants
        dosage = False
    else:
        _need_file(cfg["dosage"], "dosage file")
        snps, matrix, samples = plink.read_dosage_table(cfg["dosage"])
        variants = [plink.Variant("NA", s, 0.0, 0, "NA", "NA") for s in snps]
        data = matrix
        dosage = True
    ph = plink.read_pheno_table(cfg["pheno"], samples)
    y = _pheno_column(ph, cfg["pheno_name"], cfg["pheno"])
    if ph.n_unmatched:
        print(f"scan: {ph.n_unmatched} phenotype rows did not match any sample", file=sys.stderr)
    z = None
    if cfg["covar"] is not None:
        cv = plink.read_covariate_table(cfg["covar"], samples)
        cols = cv.columns if cfg["covar_names"] is None else tuple(cfg["covar_names"].split(","))
        missing = [c for c in cols if c not in cv.columns]
        if missing:
            raise ConfigError(f"covariates not in {cfg['covar']}: {', '.join(missing)}")
        z = np.column_stack([np.ones(len(samples))] + [cv.column(c) for c in cols])
    if cfg["qc"] and not dosage:
        obs = y[np.isfinite(y)]
        controls = (y == 1) if obs.size and set(np.unique(obs)) <= {1.0, 2.0} else None
        data, report = plink.apply_qc(
            data, controls, plink.QcConfig(cfg["maf_min"], cfg["hwe_alpha"], cfg["call_rate_min"])
        )
        variants = data.variants
        print(
            f"qc: removed call_rate={len(report.call_rate)} maf={len(report.maf)} hwe={len(report.hwe)}",
            file=sys.stderr,
        )
    results = assoc.scan(
        data, y, z=z, b=cfg["b"], M=cfg["M"], m=cfg["m"], screen=cfg["screen"], method=cfg["method"],
        workers=cfg["workers"], block_size=cfg["block_size"], dosage=dosage, progress=_progress("scan"),
    )
    try:
        plink.write_results(results, cfg["out"], variants)
    except OSError as exc:
        raise OutputError(f"cannot write {cfg['out']}: {exc}") from None
    counts = collections.Counter(r.flag.value for r in results)
    hits = sum(1 for r in results if r.p_value < GWAS_THRESHOLD)
    _summary(variants=len(results), **{k.lower(): counts.get(k.value, 0) for k in assoc.Flag}, hits_5e8=hits)
    return EXIT_OK


def _case_control(y):
    obs = np.unique(y[np.isfinite(y)])
    if set(obs) <= {1.0, 2.0}:
        return y == 2, y == 1
    if set(obs) <= {0.0, 1.0}:
        return y == 1, y == 0
    raise plink.BedFormatError("case/control phenotype must be coded 1/2 or 0/1")


def run_epistasis(cfg):
    _need(cfg, "bfile", "pheno", "out")
    for ext in (".bed", ".bim", ".fam"):
        _need_file(cfg["bfile"] + ext, "PLINK file")
    _need_file(cfg["pheno"], "phenotype file")
    try:
        metric = SnpDistance.parse(cfg["metric"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ds = plink.read_plink_triplet(cfg["bfile"])
    ph = plink.read_pheno_table(cfg["pheno"], ds.samples)
    cases, controls = _case_control(_pheno_column(ph, cfg["pheno_name"], cfg["pheno"]))
    g = ds.genotypes()
    hits = epistasis.epistasis_scan(
        g[:, cases], g[:, controls], metric=metric, q=cfg["q"], min_distance_bp=cfg["min_distance"],
        positions=[v.pos for v in ds.variants], chromosomes=[v.chrom for v in ds.variants],
        snp_ids=[v.snp for v in ds.variants],
    )
    lines = ["snp_a\tsnp_b\tp_cases\tp_controls\tclass"]
    lines += [f"{h.snp_a}\t{h.snp_b}\t{_fmt(h.p_cases)}\t{_fmt(h.p_controls)}\t{h.classification}" for h in hits]
    _write_text(cfg["out"], lines)
    counts = collections.Counter(h.classification for h in hits)
    _summary(
        pairs=len(hits),
        putative_interaction=counts[epistasis.EpistasisClass.PUTATIVE_INTERACTION],
        population_substructure=counts[epistasis.EpistasisClass.POPULATION_SUBSTRUCTURE],
    )
    return EXIT_OK


def read_counts_grid(path):
    """Counts grid from delimited text; a non-numeric first row or column is treated as labels."""
    with open(path, encoding="utf-8") as fh:
        rows = [ln.replace(",", " ").replace("\t", " ").split() for ln in fh if ln.strip()]
    if not rows:
        raise plink.BedFormatError(f"{path}: empty table")

    def numeric(tok):
        try:
            float(tok)
            return True
        except ValueError:
            return False

    if not all(numeric(t) for t in rows[0]):
        rows = rows[1:]
    if rows and not numeric(rows[0][0]):
        rows = [r[1:] for r in rows]
    try:
        grid = np.array([[float(t) for t in r] for r in rows])
    except ValueError:
        raise plink.BedFormatError(f"{path}: counts must be numeric") from None
    if grid.ndim != 2:
        raise plink.BedFormatError(f"{path}: rows have unequal lengths")
    return grid


def _result_lines(named):
    lines = ["test\tstatistic\tp_value\tflags"]
    for name, r in named:
        lines.append(f"{name}\t{_fmt(r.statistic)}\t{_fmt(r.p_value)}\t{','.join(r.flags) or '-'}")
    return lines


def run_categorical(cfg):
    _need(cfg, "table")
    _need_file(cfg["table"], "table file")
    t = categorical.ContingencyTable(read_counts_grid(cfg["table"]))
    named = [
        ("dcov", categorical.dcov_indep_test(t)),
        ("pearson", categorical.pearson_chi2(t)),
        ("g", categorical.g_test(t)),
    ]
    lines = _result_lines(named)
    if cfg["permutations"]:
        p = categorical.perm_indep_pvalue(t, "dcov", cfg["permutations"], simulate.make_rng(cfg["seed"]))
        lines.append(f"dcov_permutation\t{_fmt(named[0][1].statistic)}\t{_fmt(p)}\t-")
    if cfg["out"]:
        _write_text(cfg["out"], lines)
    else:
        print("\n".join(lines))
    return EXIT_OK


def run_gof(cfg):
    _need(cfg, "counts")
    counts = np.asarray(cfg["counts"])
    if (cfg["probs"] is None) == (cfg["hwe"] is None):
        raise ConfigError("give exactly one of --probs and --hwe")
    try:
        probs = categorical.hwe_expected(cfg["hwe"]) if cfg["hwe"] is not None else np.asarray(cfg["probs"])
        spec = categorical.GofSpec(probs, counts)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    lines = _result_lines([("energy", categorical.energy_gof_test(spec)), ("pearson", categorical.pearson_chi2(spec))])
    if cfg["out"]:
        _write_text(cfg["out"], lines)
    else:
        print("\n".join(lines))
    return EXIT_OK


def _simulate_rows(cfg):
    seed, R, n = cfg["seed"], cfg["replicates"], cfg["n"]
    design = cfg["design"]
    cell = 0
    if design in ("typeI", "power"):
        hs = [0.0] if design == "typeI" else cfg["h"]
        beta = 0.0 if design == "typeI" else cfg["beta"]
        yield "design\tmaf\th\tbeta\tb\treplicate\tp_value"
        for maf in cfg["maf"]:
            for h in hs:
                for r in range(R):
                    rng = simulate.make_rng(seed, cell * 2**32 + r)
                    x, y = simulate.sample_power_model(maf, h, beta, n, rng)
                    for b in cfg["b_grid"]:
                        p = assoc.test(x, y, b, method="finite").p_value
                        yield f"{design}\t{maf:g}\t{h:g}\t{beta:g}\t{b:g}\t{r}\t{_fmt(p)}"
                cell += 1
    elif design == "categorical":
        yield "design\trows\tcols\teps\treplicate\tp_dcov\tp_pearson\tp_g"
        for eps in cfg["eps"]:
            probs = simulate.decaying_marginals(cfg["rows"], cfg["cols"], eps)
            for r in range(R):
                t = simulate.sample_table(probs, n, simulate.make_rng(seed, cell * 2**32 + r))
                ps = [_safe_p(f, t) for f in (categorical.dcov_indep_test, categorical.pearson_chi2, categorical.g_test)]
                yield f"categorical\t{cfg['rows']}\t{cfg['cols']}\t{eps:g}\t{r}\t" + "\t".join(ps)
            cell += 1
    elif design == "hwe":
        yield "design\tmodel\tparam\treplicate\tp_energy\tp_pearson"
        null = simulate.hwe_null(cfg["model"])
        for par in cfg["param"]:
            probs = simulate.hwe_departure(cfg["model"], par)
            for r in range(R):
                c = simulate.sample_table(probs, n, simulate.make_rng(seed, cell * 2**32 + r))
                spec = categorical.GofSpec(null, c)
                ps = [_safe_p(f, spec) for f in (categorical.energy_gof_test, categorical.pearson_chi2)]
                yield f"hwe\t{cfg['model']}\t{par:g}\t{r}\t" + "\t".join(ps)
            cell += 1
    else:
        build = simulate.qexp_table if cfg["interaction"] == "qexp" else simulate.qmult_table
        yield "design\tmodel\tparam\treplicate\tp_value"
        for par in cfg["param"]:
            for r in range(R):
                rng = simulate.make_rng(seed, cell * 2**32 + r)
                x1, x2 = build(*simulate.default_marginals(rng), par).sample(n, rng)
                p = _safe_p(lambda a: epistasis.pair_test(*a), (x1, x2))
                yield f"epistasis\t{cfg['interaction']}\t{par:g}\t{r}\t{p}"
            cell += 1


def _safe_p(fn, arg):
    try:
        return _fmt(fn(arg).p_value)
    except ValueError:
        return "nan"


def run_simulate(cfg):
    if cfg["replicates"] < 0 or cfg["n"] < 1:
        raise ConfigError("replicates must be >= 0 and n >= 1")
    try:
        lines = list(_simulate_rows(cfg))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg["out"]:
        _write_text(cfg["out"], lines)
    else:
        print("\n".join(lines))
    return EXIT_OK


def make_null_dataset(n_snps, n, seed, maf_range=(0.05, 0.5), chunk=2000):
    """Packed HWE genotypes with MAF uniform on ``maf_range``."""
    rng = simulate.make_rng(seed)
    packed = []
    for s in range(0, n_snps, chunk):
        L = min(chunk, n_snps - s)
        maf = rng.uniform(*maf_range, size=(L, 1))
        u = rng.random((L, n))
        codes = (u < maf**2).astype(np.int8) + (u < 1 - (1 - maf) ** 2)
        packed.append(plink.pack_genotypes(codes))
    samples = [plink.Sample("F", f"I{i}", "0", "0", "0", "-9") for i in range(n)]
    variants = [plink.Variant("1", f"snp{j}", 0.0, j + 1, "A", "B") for j in range(n_snps)]
    return plink.BedDataset(samples, variants, np.concatenate(packed) if packed else np.zeros((0, (n + 3) // 4)))


def run_bench(cfg):
    t0 = time.perf_counter()
    ds = make_null_dataset(cfg["n_snps"], cfg["n"], cfg["seed"])
    y = simulate.make_rng(cfg["seed"], 1).standard_normal(cfg["n"])
    t_gen = time.perf_counter() - t0
    out = {"n_snps": cfg["n_snps"], "n": cfg["n"], "generate_s": f"{t_gen:.2f}"}
    kw = dict(b=cfg["b"], workers=cfg["workers"], block_size=cfg["block_size"], method="finite")
    t0 = time.perf_counter()
    assoc.scan(ds, y, screen=True, progress=_progress("bench screened"), **kw)
    out["screened_s"] = f"{time.perf_counter() - t0:.2f}"
    if cfg["naive"]:
        t0 = time.perf_counter()
        assoc.scan(ds, y, screen=False, progress=_progress("bench naive"), **kw)
        out["naive_s"] = f"{time.perf_counter() - t0:.2f}"
        out["ratio"] = f"{float(out['naive_s']) / max(float(out['screened_s']), 1e-9):.2f}"
    _summary(**out)
    return EXIT_OK


COMMANDS = {
    "scan": run_scan,
    "epistasis": run_epistasis,
    "categorical": run_categorical,
    "gof": run_gof,
    "simulate": run_simulate,
    "bench": run_bench,
}


def main(argv=None):
    try:
        cfg = resolve(argv)
        return COMMANDS[cfg["command"]](cfg)
    except ConfigError as exc:
        print(f"genodcov: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutputError as exc:
        print(f"genodcov: output error: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    except (plink.BedFormatError, assoc.DegenerateDataError) as exc:
        print(f"genodcov: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"genodcov: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"genodcov: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
