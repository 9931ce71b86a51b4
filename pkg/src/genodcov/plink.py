"""PLINK binary triplets, phenotype tables, QC filters and result files.

Genotypes stay 2-bit packed in memory and are decoded per block. A decoded
code counts copies of allele 1 as listed in the ``.bim`` file; with
``flip=True`` it counts allele 2 instead.
"""

import csv
import os
import tempfile
from collections import namedtuple
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .categorical import GofSpec, energy_gof_test, hwe_expected, pearson_chi2
from .geno_model import MISSING

__all__ = [
    "BedFormatError",
    "Sample",
    "Variant",
    "BedDataset",
    "read_plink_triplet",
    "write_plink_triplet",
    "pack_genotypes",
    "QcConfig",
    "QcReport",
    "apply_qc",
    "AlignedTable",
    "read_pheno_table",
    "read_covariate_table",
    "read_dosage_table",
    "ResultRow",
    "RESULTS_VERSION",
    "RESULT_COLUMNS",
    "write_results",
    "read_results",
    "atomic_write",
]

MAGIC = bytes([0x6C, 0x1B])
SNP_MAJOR = 0x01
MISSING_TOKENS = frozenset({"", "na", "nan", ".", "-9"})
RESULTS_VERSION = 1
RESULT_COLUMNS = ("snp", "chrom", "pos", "allele", "statistic", "p_value", "flag", "n_effective")

Sample = namedtuple("Sample", "fid iid father mother sex phenotype")
Variant = namedtuple("Variant", "chrom snp cm pos allele1 allele2")


class BedFormatError(ValueError):
    """Malformed or unsupported PLINK input."""


def _decode_lut(flip):
    # two-bit codes 00, 01, 10, 11 -> hom allele1, missing, het, hom allele2
    codes = np.array([0, MISSING, 1, 2] if flip else [2, MISSING, 1, 0], dtype=np.int8)
    byte = np.arange(256)
    return codes[(byte[:, None] >> (2 * np.arange(4))[None, :]) & 3]


_UMASK = os.umask(0)
os.umask(_UMASK)

_LUT = {False: _decode_lut(False), True: _decode_lut(True)}


@dataclass(frozen=True)
class BedDataset:
    """Samples, variants and SNP-major packed genotypes."""

    samples: tuple
    variants: tuple
    packed: np.ndarray = field(repr=False)
    flip: bool = False

    def __post_init__(self):
        packed = np.asarray(self.packed, dtype=np.uint8)
        width = (len(self.samples) + 3) // 4
        if packed.shape != (len(self.variants), width):
            raise BedFormatError(
                f"packed genotypes have shape {packed.shape}, expected {(len(self.variants), width)}"
            )
        packed.setflags(write=False)
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "variants", tuple(self.variants))
        object.__setattr__(self, "packed", packed)

    @property
    def n_samples(self):
        return len(self.samples)

    @property
    def n_variants(self):
        return len(self.variants)

    @property
    def is_dosage(self):
        return False

    def read_block(self, start, stop):
        """Decode SNPs ``start:stop`` to an int8 ``(stop - start, n)`` matrix."""
        block = self.packed[start:stop]
        return _LUT[self.flip][block].reshape(block.shape[0], -1)[:, : self.n_samples]

    def genotypes(self):
        return self.read_block(0, self.n_variants)

    def subset_variants(self, index):
        index = np.asarray(index, dtype=np.intp)
        return BedDataset(self.samples, [self.variants[i] for i in index], self.packed[index], self.flip)

    def with_flip(self, flip):
        return BedDataset(self.samples, self.variants, self.packed, bool(flip))


def _split(line):
    return line.split()


def _read_fam(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            f = _split(line)
            if len(f) != 6:
                raise BedFormatError(f"{path}:{lineno}: expected 6 fields, found {len(f)}")
            out.append(Sample(*f))
    return out


def _read_bim(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            f = _split(line)
            if len(f) != 6:
                raise BedFormatError(f"{path}:{lineno}: expected 6 fields, found {len(f)}")
            try:
                out.append(Variant(f[0], f[1], float(f[2]), int(f[3]), f[4], f[5]))
            except ValueError:
                raise BedFormatError(f"{path}:{lineno}: non-numeric position") from None
    return out


def read_plink_triplet(stem, flip=False):
    """Load ``stem.bed``, ``stem.bim`` and ``stem.fam``."""
    stem = os.fspath(stem)
    samples = _read_fam(stem + ".fam")
    variants = _read_bim(stem + ".bim")
    with open(stem + ".bed", "rb") as fh:
        raw = fh.read()
    if len(raw) < 3 or raw[:2] != MAGIC:
        raise BedFormatError(f"{stem}.bed: not a PLINK bed file (bad magic bytes)")
    if raw[2] != SNP_MAJOR:
        raise BedFormatError(
            f"{stem}.bed: individual-major layout is not supported; "
            "convert with `plink --bfile <stem> --make-bed`"
        )
    width = (len(samples) + 3) // 4
    expected = width * len(variants)
    payload = np.frombuffer(raw, dtype=np.uint8, offset=3)
    if payload.size != expected:
        kind = "truncated" if payload.size < expected else "oversized"
        raise BedFormatError(f"{stem}.bed: {kind} payload, {payload.size} bytes for {expected} expected")
    return BedDataset(samples, variants, payload.reshape(len(variants), width), flip)


def _encode(codes, flip):
    codes = np.asarray(codes)
    bits = np.full(codes.shape, 1, dtype=np.uint8)
    two, zero = (0b11, 0b00) if flip else (0b00, 0b11)
    bits[codes == 2] = two
    bits[codes == 1] = 0b10
    bits[codes == 0] = zero
    L, n = codes.shape
    width = (n + 3) // 4
    padded = np.zeros((L, 4 * width), dtype=np.uint8)
    padded[:, :n] = bits
    q = padded.reshape(L, width, 4)
    return (q[..., 0] | (q[..., 1] << 2) | (q[..., 2] << 4) | (q[..., 3] << 6)).astype(np.uint8)


def pack_genotypes(codes, flip=False):
    """Pack an ``(L, n)`` code matrix (MISSING for no call) into PLINK bytes."""
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ValueError("expected an SNP-major matrix")
    if not np.all(np.isin(codes, (0, 1, 2, MISSING))):
        raise ValueError("genotype codes must be 0, 1, 2 or missing")
    return _encode(codes, flip)


@contextmanager
def atomic_write(path, mode="w", **kwargs):
    """Open a temporary file next to ``path`` and rename it into place on success."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix="." + os.path.basename(path) + ".", suffix=".tmp")
    try:
        os.chmod(tmp, 0o666 & ~_UMASK)
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_plink_triplet(stem, dataset_or_codes, samples=None, variants=None, flip=False):
    """Write a dataset, or a code matrix with its samples and variants."""
    stem = os.fspath(stem)
    if isinstance(dataset_or_codes, BedDataset):
        ds = dataset_or_codes
        samples, variants, packed = ds.samples, ds.variants, ds.packed
    else:
        packed = pack_genotypes(dataset_or_codes, flip)
        if samples is None or variants is None:
            raise ValueError("samples and variants are required with a code matrix")
        if packed.shape[0] != len(variants) or np.asarray(dataset_or_codes).shape[1] != len(samples):
            raise ValueError("code matrix shape does not match samples and variants")
    with atomic_write(stem + ".fam") as fh:
        for s in samples:
            fh.write(" ".join(str(v) for v in Sample(*s)) + "\n")
    with atomic_write(stem + ".bim") as fh:
        for v in variants:
            v = Variant(*v)
            fh.write(f"{v.chrom}\t{v.snp}\t{v.cm:g}\t{v.pos}\t{v.allele1}\t{v.allele2}\n")
    with atomic_write(stem + ".bed", "wb") as fh:
        fh.write(MAGIC + bytes([SNP_MAJOR]))
        fh.write(np.ascontiguousarray(packed, dtype=np.uint8).tobytes())


@dataclass(frozen=True)
class QcConfig:
    maf_min: float = 0.01
    hwe_alpha: float = 0.001
    call_rate_min: float = 0.95
    hwe_test: str = "energy"

    def __post_init__(self):
        for name in ("maf_min", "hwe_alpha", "call_rate_min"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v!r}")
        if self.hwe_test not in ("energy", "pearson"):
            raise ValueError("hwe_test must be 'energy' or 'pearson'")


@dataclass(frozen=True)
class QcReport:
    """Variant identifiers removed per criterion, checked in this order."""

    call_rate: tuple = ()
    maf: tuple = ()
    hwe: tuple = ()
    kept: int = 0

    @property
    def removed(self):
        return len(self.call_rate) + len(self.maf) + len(self.hwe)

    @property
    def empty(self):
        return self.kept == 0


def _hwe_pvalue(counts, test):
    n = counts.sum()
    if n < 10:
        return 1.0
    theta = (2 * counts[2] + counts[1]) / (2 * n)
    if theta in (0.0, 1.0):
        return 1.0
    spec = GofSpec(hwe_expected(theta), counts[::-1])
    return (energy_gof_test if test == "energy" else pearson_chi2)(spec).p_value


def apply_qc(ds, controls=None, cfg=None, block_size=4096):
    """Drop variants failing call rate, MAF or the controls-only HWE test.

    Returns the filtered dataset and a :class:`QcReport`.
    """
    cfg = QcConfig() if cfg is None else cfg
    ctrl = np.ones(ds.n_samples, dtype=bool) if controls is None else np.asarray(controls, dtype=bool)
    if ctrl.shape != (ds.n_samples,):
        raise ValueError("controls mask must have one entry per sample")
    keep, bad = [], {"call_rate": [], "maf": [], "hwe": []}
    for s in range(0, ds.n_variants, block_size):
        g = ds.read_block(s, min(s + block_size, ds.n_variants))
        called = g != MISSING
        n_called = called.sum(axis=1)
        rate = n_called / max(ds.n_samples, 1)
        freq = np.where(called, g, 0).sum(axis=1) / np.maximum(2 * n_called, 1)
        maf = np.minimum(freq, 1 - freq)
        gc = g[:, ctrl]
        counts = np.stack([(gc == c).sum(axis=1) for c in (0, 1, 2)], axis=1)
        for i in range(g.shape[0]):
            idx = s + i
            sid = ds.variants[idx].snp
            if rate[i] < cfg.call_rate_min:
                bad["call_rate"].append(sid)
            elif n_called[i] == 0 or maf[i] < cfg.maf_min:
                bad["maf"].append(sid)
            elif _hwe_pvalue(counts[i], cfg.hwe_test) < cfg.hwe_alpha:
                bad["hwe"].append(sid)
            else:
                keep.append(idx)
    report = QcReport(tuple(bad["call_rate"]), tuple(bad["maf"]), tuple(bad["hwe"]), len(keep))
    return ds.subset_variants(keep), report


@dataclass(frozen=True)
class AlignedTable:
    """Table columns aligned to the dataset's sample order.

    ``values`` has one row per sample; cells that are missing, and samples
    absent from the file, are NaN.
    """

    columns: tuple
    values: np.ndarray
    n_unmatched: int
    n_absent: int

    def column(self, name=None):
        if name is None:
            return self.values[:, 0]
        return self.values[:, self.columns.index(name)]


def _read_rows(path):
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise BedFormatError(f"{path}: empty table")
    if "\t" in lines[0]:
        rows = list(csv.reader(lines, delimiter="\t"))
    else:
        rows = [ln.split() for ln in lines]
    header = [h.strip() for h in rows[0]]
    if len(header) < 3:
        raise BedFormatError(f"{path}: need FID, IID and at least one value column")
    body = rows[1:]
    for lineno, r in enumerate(body, 2):
        if len(r) != len(header):
            raise BedFormatError(f"{path}:{lineno}: expected {len(header)} fields, found {len(r)}")
    return header, body


def _parse_cell(tok, path):
    t = tok.strip()
    if t.lower() in MISSING_TOKENS:
        return np.nan
    try:
        return float(t)
    except ValueError:
        raise BedFormatError(f"{path}: non-numeric value {tok!r}") from None


def _align(path, samples):
    header, body = _read_rows(path)
    order = {(s.fid, s.iid): i for i, s in enumerate(samples)}
    values = np.full((len(samples), len(header) - 2), np.nan)
    seen = set()
    unmatched = 0
    for r in body:
        key = (r[0].strip(), r[1].strip())
        if key in seen:
            raise BedFormatError(f"{path}: duplicate id {key[0]} {key[1]}")
        seen.add(key)
        i = order.get(key)
        if i is None:
            unmatched += 1
            continue
        values[i] = [_parse_cell(t, path) for t in r[2:]]
    matched = len(seen) - unmatched
    if matched == 0:
        raise BedFormatError(f"{path}: no ids overlap the sample list")
    return AlignedTable(tuple(header[2:]), values, unmatched, len(samples) - matched)


def read_pheno_table(path, samples):
    """Phenotype columns aligned to ``samples`` by (FID, IID).

    Missing tokens are empty, ``NA``, ``NaN``, ``.`` and ``-9``.
    """
    return _align(path, samples)


def read_covariate_table(path, samples):
    """Covariate columns aligned like :func:`read_pheno_table`; no intercept is added."""
    return _align(path, samples)


def read_dosage_table(path, samples=None):
    """Per-sample dosage rows (FID, IID, one column per SNP) as an SNP-major matrix.

    Returns ``(snp_ids, matrix, sample_ids)`` with NaN for missing calls.
    Without ``samples`` the file's own row order is used.
    """
    if samples is None:
        samples = [Sample(r[0].strip(), r[1].strip(), "0", "0", "0", "-9") for r in _read_rows(path)[1]]
    t = _align(path, samples)
    v = t.values
    if np.any((v < 0) | (v > 2)):
        raise BedFormatError(f"{path}: dosages must lie in [0, 2]")
    return t.columns, np.ascontiguousarray(v.T), tuple(samples)


ResultRow = namedtuple("ResultRow", RESULT_COLUMNS)


def _fmt(x):
    return "nan" if x is None else format(float(x), ".17g")


def write_results(results, path, variants=None, allele="allele1"):
    """Write one tab-separated row per result, in the given order.

    ``results`` holds :class:`ResultRow` tuples, or test results (with
    ``statistic``, ``p_value``, ``flag`` and ``n_effective``) paired with
    ``variants``.
    """
    rows = []
    results = list(results)
    if variants is not None:
        variants = list(variants)
        if len(variants) != len(results):
            raise ValueError("one variant per result is required")
        for r, v in zip(results, variants):
            v = Variant(*v)
            flag = getattr(r.flag, "value", r.flag)
            rows.append(
                ResultRow(v.snp, v.chrom, v.pos, getattr(v, allele), r.statistic, r.p_value, flag, r.n_effective)
            )
    else:
        rows = [ResultRow(*r) for r in results]
    with atomic_write(path, encoding="utf-8", newline="") as fh:
        fh.write(f"## genodcov results version={RESULTS_VERSION}\n")
        fh.write("\t".join(RESULT_COLUMNS) + "\n")
        for r in rows:
            fh.write(
                "\t".join(
                    [str(r.snp), str(r.chrom), str(r.pos), str(r.allele), _fmt(r.statistic),
                     _fmt(r.p_value), str(r.flag), str(int(r.n_effective))]
                )
                + "\n"
            )


def read_results(path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("## genodcov results version="):
            raise BedFormatError(f"{path}: missing results header")
        version = int(first.strip().split("=", 1)[1])
        if version != RESULTS_VERSION:
            raise BedFormatError(f"{path}: unsupported results version {version}")
        cols = fh.readline().rstrip("\n").split("\t")
        if tuple(cols) != RESULT_COLUMNS:
            raise BedFormatError(f"{path}: unexpected columns {cols}")
        out = []
        for line in fh:
            f = line.rstrip("\n").split("\t")
            out.append(ResultRow(f[0], f[1], int(f[2]), f[3], float(f[4]), float(f[5]), f[6], int(f[7])))
    return out
