"""Command line interface: individual stages and a config-driven full run."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .flow import (
    FlowConfig,
    assemble_flow,
    evaluate_flow,
    read_image,
    solve_flow,
    write_image,
)
from .geometry import RadialSurface
from .harmonics import VectorBasis
from .pipeline import (
    PipelineConfig,
    VolumetricFrame,
    cell_phantom,
    centre_points,
    detect_cell_centres,
    read_volume,
    rescale_joint,
    sample_surface_image,
    write_volume,
)
from .render import RenderConfig, colour_code, export
from .surface_fit import DEFAULT_S, FitConfig, SamplePoints, fit_surface
from .trimesh import build_icosphere, mesh_from_off, subdivision_from_nodes, write_off

log = logging.getLogger("sphereflow")

THREADS_ENV = "SPHEREFLOW_THREADS"
STAGES = ("ingest", "mesh", "detect", "fit", "project", "flow", "render")

DEFAULT_CONFIG = {
    "workdir": "run",
    "k": 7,
    "raw_volumes": [],
    "volumes": [],
    "spacing": [1.0, 1.0, 1.0],
    "dt": 1.0,
    "pipeline": {"sigma": 1.0, "threshold": 0.3, "epsilon": 0.05, "band_samples": 11},
    "fit": {"n_max": 30, "beta": 1e-4, "s": DEFAULT_S, "tol": 1e-2, "max_iter": 100},
    "flow": {"n_max": 50, "alpha": [1e-2, 1e-1, 1.0, 10.0], "tol": 1e-2, "max_iter": 1000},
    "render": {"R": None, "hemisphere": "upper", "size": 512},
}


def threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def alpha_tag(alpha: float) -> str:
    """File-name safe alpha: 0.1 -> 0p1."""
    return f"{alpha:g}".replace(".", "p")


# --------------------------------------------------------------------------
# stage implementations shared by subcommands and `run`


def ingest(npy: Path, out: Path, spacing, frame: int = 0, dt: float = 1.0) -> None:
    write_volume(VolumetricFrame(np.load(npy), tuple(spacing), frame, dt), out)


def detect(volume: Path, config: PipelineConfig, out: Path) -> int:
    samples = detect_cell_centres(read_volume(volume), config)
    samples.write_csv(out)
    return len(samples)


def fit(samples_csv: Path, config: FitConfig, out: Path, centre: bool, k: int | None = None,
        time_label: float = 0.0) -> dict:
    samples = SamplePoints.read_csv(samples_csv)
    offset = None
    if centre:
        samples, offset, radius = centre_points(samples)
        log.info("sphere fit: centre %s radius %.4g", np.round(offset, 4).tolist(), radius)
    mesh = build_icosphere(k) if k is not None else None
    surf, report = fit_surface(samples, config, mesh=mesh, time=time_label, centre=offset,
                               return_report=True)
    surf.save(out)
    return report.to_json()


def project(volumes, surfaces, mesh, config: PipelineConfig, outs) -> None:
    """Frame t is sampled on surface t; intensities are rescaled jointly."""
    raw = [sample_surface_image(read_volume(v), s, mesh, config) for v, s in zip(volumes, surfaces)]
    for img, out in zip(rescale_joint(raw), outs):
        write_image(img, out)


def flow(rho: Path, f0: Path, f1: Path, mesh, n_max: int, alphas, tol: float, max_iter: int,
         outs) -> list[dict]:
    surf = RadialSurface.load(rho)
    img0, img1 = read_image(mesh, f0, 0), read_image(mesh, f1, 1)
    basis = VectorBasis(n_max, mesh)
    base = FlowConfig(n_max, alphas[0], tol, max_iter)
    system = assemble_flow(surf, img0, img1, base, basis)

    def one(alpha, out):
        cfg = FlowConfig(n_max, alpha, tol, max_iter)
        coeffs, report = solve_flow(system, cfg)
        if not report.converged:
            log.warning("alpha=%g: solver stopped at residual %.3g", alpha, report.residual)
        field = evaluate_flow(coeffs, surf, mesh, n_max, basis, alpha=alpha, report=report.to_json())
        field.save(out, Path(out).with_suffix(".csv"))
        return {"alpha": alpha, **report.to_json()}

    with ThreadPoolExecutor(max_workers=threads()) as pool:
        return list(pool.map(one, alphas, outs))


def render(flow_json: Path, rho: Path, mesh, config: RenderConfig, stem: Path) -> dict:
    data = json.loads(Path(flow_json).read_text())
    surf = RadialSurface.load(rho)
    coeffs = np.array(data["coeffs"], dtype=float)
    field = evaluate_flow(coeffs, surf, mesh, data["n_max"])
    paths = export(colour_code(field, config, surf), config, stem)
    return {k: str(v) for k, v in paths.items()}


def mesh_from_images(path) -> tuple:
    n = sum(1 for _ in open(path)) - 1
    k = subdivision_from_nodes(n)
    return build_icosphere(k), k


# --------------------------------------------------------------------------
# synthetic fixture


def synth(out: Path, seed: int = 0, size: int = 64, cells: int = 40, omega: float = 0.05,
          frames: int = 2) -> Path:
    """Two-frame rotating cell phantom plus a ready-to-run config."""
    rng = np.random.default_rng(seed)
    out.mkdir(parents=True, exist_ok=True)
    radius = 0.35 * size
    terms = {(0, 1): radius * np.sqrt(4 * np.pi), (2, 1): 0.05 * radius * rng.uniform(0.5, 1.5)}
    truth = RadialSurface.from_terms(terms, n_max=2)
    ph = cell_phantom(truth, cells, shape=(size,) * 3, n_frames=frames, omega=omega,
                      blob_sigma=1.5)
    volumes = []
    for t, fr in enumerate(ph.frames):
        write_volume(fr, out / f"volume_{t}")
        volumes.append(f"volume_{t}")
    truth.save(out / "truth_rho.json")
    np.savetxt(out / "truth_centres.csv", np.vstack(ph.cell_centres), delimiter=",",
               header="x,y,z", comments="", fmt="%.17g")
    config = {
        "workdir": "artifacts",
        "k": 3,
        "volumes": volumes,
        "pipeline": {"sigma": 1.0, "threshold": 0.3, "epsilon": 0.1, "band_samples": 11},
        "fit": {"n_max": 4, "beta": 1e-4, "s": DEFAULT_S, "tol": 1e-10, "max_iter": 200},
        "flow": {"n_max": 4, "alpha": [0.1, 1.0], "tol": 1e-8, "max_iter": 500},
        "render": {"R": None, "hemisphere": "upper", "size": 128},
    }
    path = out / "run.json"
    path.write_text(json.dumps(config, indent=1))
    return path


# --------------------------------------------------------------------------
# config-driven run with provenance


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage


def load_config(path) -> tuple[dict, Path]:
    path = Path(path)
    user = json.loads(path.read_text())
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    for key, val in user.items():
        if isinstance(val, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(val)
        else:
            cfg[key] = val
    return cfg, path.parent


class Runner:
    def __init__(self, config: dict, base: Path, force: bool = False):
        self.cfg = config
        self.base = base
        self.work = (base / config["workdir"]).resolve()
        self.force = force
        self.prov_dir = self.work / "provenance"

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else (self.base / p).resolve()

    # file layout
    @property
    def n_frames(self) -> int:
        return len(self.cfg["volumes"])

    def volume(self, t):
        return self.path(self.cfg["volumes"][t])

    def out(self, name) -> Path:
        return self.work / name

    def stage_io(self, stage: str):
        """(inputs, outputs, params) of a stage."""
        c = self.cfg
        n = self.n_frames
        vols = [self.volume(t) / "volume.json" for t in range(n)]
        slices = [p for t in range(n) for p in sorted(self.volume(t).glob("*.pgm"))]
        if stage == "ingest":
            raws = [self.path(p) for p in c["raw_volumes"]]
            return raws, vols, {"spacing": c["spacing"], "dt": c["dt"]}
        if stage == "mesh":
            return [], [self.out("mesh.off")], {"k": c["k"]}
        if stage == "detect":
            return vols + slices, [self.out(f"points_{t}.csv") for t in range(n)], c["pipeline"]
        if stage == "fit":
            return ([self.out(f"points_{t}.csv") for t in range(n)],
                    [self.out(f"rho_{t}.json") for t in range(n)], {**c["fit"], "k": c["k"]})
        if stage == "project":
            return (vols + slices + [self.out(f"rho_{t}.json") for t in range(n)] + [self.out("mesh.off")],
                    [self.out(f"image_{t}.csv") for t in range(n)], {**c["pipeline"], "k": c["k"]})
        pairs = range(n - 1)
        alphas = c["flow"]["alpha"]
        flows = [self.out(f"flow_{t}_a{alpha_tag(a)}.json") for t in pairs for a in alphas]
        if stage == "flow":
            ins = [self.out(f"rho_{t}.json") for t in pairs] + [self.out(f"image_{t}.csv") for t in range(n)]
            return ins, flows + [f.with_suffix(".csv") for f in flows], c["flow"]
        if stage == "render":
            outs = [f.with_name(f.stem + tail) for f in flows
                    for tail in (".ply", "_top.png", "_rotated.png", "_legend.png")]
            return flows + [self.out(f"rho_{t}.json") for t in pairs], outs, c["render"]
        raise ValueError(f"unknown stage {stage!r}")

    def rel(self, p) -> str:
        return os.path.relpath(p, self.base)

    def _record_path(self, stage):
        return self.prov_dir / f"{stage}.json"

    def up_to_date(self, stage) -> bool:
        rec_path = self._record_path(stage)
        if self.force or not rec_path.exists():
            return False
        rec = json.loads(rec_path.read_text())
        ins, outs, params = self.stage_io(stage)
        if rec.get("params") != json.loads(json.dumps(params)):
            return False
        current = {self.rel(p): sha256(p) for p in ins if p.exists()}
        if current != rec.get("inputs") or len(current) != len(ins):
            return False
        return all(p.exists() and rec["outputs"].get(self.rel(p)) == sha256(p) for p in outs)

    def execute(self, stage):
        c = self.cfg
        n = self.n_frames
        k = c["k"]
        pc = PipelineConfig(**c["pipeline"])
        if stage == "ingest":
            for t, raw in enumerate(c["raw_volumes"]):
                ingest(self.path(raw), self.volume(t), c["spacing"], t, c["dt"])
            return {}
        if stage == "mesh":
            write_off(build_icosphere(k), self.out("mesh.off"))
            return {}
        if stage == "detect":
            return {"counts": [detect(self.volume(t), pc, self.out(f"points_{t}.csv")) for t in range(n)]}
        if stage == "fit":
            fc = FitConfig(**c["fit"])
            reports = [fit(self.out(f"points_{t}.csv"), fc, self.out(f"rho_{t}.json"), True, k,
                           t * c["dt"]) for t in range(n)]
            return {"solver": reports}
        mesh = mesh_from_off(self.out("mesh.off"))
        if stage == "project":
            surfs = [RadialSurface.load(self.out(f"rho_{t}.json")) for t in range(n)]
            project([self.volume(t) for t in range(n)], surfs, mesh, pc,
                    [self.out(f"image_{t}.csv") for t in range(n)])
            return {}
        fl = c["flow"]
        alphas = [float(a) for a in fl["alpha"]]
        if stage == "flow":
            reports = []
            for t in range(n - 1):
                outs = [self.out(f"flow_{t}_a{alpha_tag(a)}.json") for a in alphas]
                reports += flow(self.out(f"rho_{t}.json"), self.out(f"image_{t}.csv"),
                                self.out(f"image_{t + 1}.csv"), mesh, fl["n_max"], alphas,
                                fl["tol"], fl["max_iter"], outs)
            return {"solver": reports}
        if stage == "render":
            rc = RenderConfig(**c["render"])
            for t in range(n - 1):
                for a in alphas:
                    f = self.out(f"flow_{t}_a{alpha_tag(a)}.json")
                    render(f, self.out(f"rho_{t}.json"), mesh, rc, f.with_suffix(""))
            return {}
        raise ValueError(f"unknown stage {stage!r}")

    def run(self, stages) -> dict:
        self.work.mkdir(parents=True, exist_ok=True)
        self.prov_dir.mkdir(exist_ok=True)
        status = {}
        for stage in STAGES:
            if stage not in stages:
                continue
            if stage == "ingest" and not self.cfg["raw_volumes"]:
                continue
            if self.up_to_date(stage):
                log.info("%s: up to date", stage)
                status[stage] = "skipped"
                continue
            ins, outs, params = self.stage_io(stage)
            missing = [str(p) for p in ins if not p.exists()]
            if missing:
                raise StageError(stage, FileNotFoundError(f"missing inputs: {missing}"))
            start = time.perf_counter()
            try:
                extra = self.execute(stage)
                elapsed = time.perf_counter() - start
                record = {
                    "stage": stage,
                    "version": __version__,
                    "inputs": {self.rel(p): sha256(p) for p in ins},
                    "outputs": {self.rel(p): sha256(p) for p in outs},
                    "params": params,
                    "seconds": elapsed,
                    **extra,
                }
            except Exception as exc:
                raise StageError(stage, exc) from exc
            self._record_path(stage).write_text(json.dumps(record, indent=1, default=float))
            log.info("%s: done in %.2fs", stage, elapsed)
            status[stage] = "done"
        return status


# --------------------------------------------------------------------------
# argument parsing


def _pipeline_args(p):
    p.add_argument("--sigma", type=float, required=True, help="Gaussian width (micrometres)")
    p.add_argument("--threshold", type=float, required=True, help="normalised intensity threshold")
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--band-samples", type=int, default=11)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sphereflow", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--seed", type=int, default=0, help="seed for randomised fixtures")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="write an icosphere as OFF")
    p.add_argument("--k", "--subdiv", dest="k", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("fit", help="fit rho to scattered samples")
    p.add_argument("--samples", type=Path, required=True)
    p.add_argument("--nmax", type=int, default=30)
    p.add_argument("--beta", type=float, default=1e-4)
    p.add_argument("--s", type=float, default=DEFAULT_S)
    p.add_argument("--tol", type=float, default=1e-2)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--centre", action="store_true", help="subtract a fitted sphere centre first")
    p.add_argument("--k", type=int, help="verify positivity on this icosphere")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("ingest", help="convert a .npy volume into a slice directory")
    p.add_argument("--npy", type=Path, required=True)
    p.add_argument("--spacing", type=float, nargs=3, default=(1.0, 1.0, 1.0))
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("detect", help="detect cell centres in a volume")
    p.add_argument("--volume", type=Path, required=True)
    _pipeline_args(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("project", help="band projection of volumes onto a fitted surface")
    p.add_argument("--volume", type=Path, nargs="+", required=True)
    p.add_argument("--rho", type=Path, nargs="+", required=True,
                   help="one surface for all frames or one per frame")
    p.add_argument("--k", type=int, required=True)
    _pipeline_args(p)
    p.add_argument("--out", type=Path, nargs="+", required=True)

    p = sub.add_parser("flow", help="solve for the tangent flow between two images")
    p.add_argument("--rho", type=Path, required=True)
    p.add_argument("--f0", type=Path, required=True)
    p.add_argument("--f1", type=Path, required=True)
    p.add_argument("--nmax", type=int, default=50)
    p.add_argument("--alpha", type=float, nargs="+", default=[0.1])
    p.add_argument("--tol", type=float, default=1e-2)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--out", type=Path, required=True,
                   help="output JSON; with several alphas a suffix _a<alpha> is added")

    p = sub.add_parser("render", help="colour-coded PLY and PNG views of a flow")
    p.add_argument("--flow", type=Path, required=True)
    p.add_argument("--rho", type=Path, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--R", type=float)
    p.add_argument("--hemisphere", choices=("upper", "lower"), default="upper")
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--out", type=Path, required=True, help="output stem")

    p = sub.add_parser("synth", help="write the synthetic two-frame fixture")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--cells", type=int, default=40)
    p.add_argument("--omega", type=float, default=0.05)

    p = sub.add_parser("run", help="run stages from a JSON config")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--stages", nargs="+", choices=STAGES, default=list(STAGES))
    p.add_argument("--force", action="store_true", help="re-run up-to-date stages")
    p.add_argument("--k", type=int, help="override the subdivision level")
    return ap


def _pc(args) -> PipelineConfig:
    return PipelineConfig(args.sigma, args.threshold, args.epsilon, args.band_samples)


def dispatch(args) -> int:
    cmd = args.command
    if cmd == "mesh":
        write_off(build_icosphere(args.k), args.out)
    elif cmd == "fit":
        cfg = FitConfig(args.nmax, args.beta, args.s, args.tol, args.max_iter)
        report = fit(args.samples, cfg, args.out, args.centre, args.k)
        print(json.dumps(report))
    elif cmd == "ingest":
        ingest(args.npy, args.out, args.spacing, args.frame, args.dt)
    elif cmd == "detect":
        print(f"{detect(args.volume, _pc(args), args.out)} centres")
    elif cmd == "project":
        if len(args.out) != len(args.volume):
            raise ValueError("need one --out per --volume")
        rhos = args.rho * len(args.volume) if len(args.rho) == 1 else args.rho
        if len(rhos) != len(args.volume):
            raise ValueError("need one --rho or one per --volume")
        project(args.volume, [RadialSurface.load(r) for r in rhos], build_icosphere(args.k),
                _pc(args), args.out)
    elif cmd == "flow":
        mesh, _ = mesh_from_images(args.f0)
        if len(args.alpha) == 1:
            outs = [args.out]
        else:
            outs = [args.out.with_name(f"{args.out.stem}_a{alpha_tag(a)}{args.out.suffix}") for a in args.alpha]
        for rep in flow(args.rho, args.f0, args.f1, mesh, args.nmax, args.alpha, args.tol,
                        args.max_iter, outs):
            print(json.dumps(rep))
    elif cmd == "render":
        cfg = RenderConfig(args.R, args.hemisphere, "top", args.size)
        print(json.dumps(render(args.flow, args.rho, build_icosphere(args.k), cfg, args.out)))
    elif cmd == "synth":
        print(synth(args.out, args.seed, args.size, args.cells, args.omega))
    elif cmd == "run":
        cfg, base = load_config(args.config)
        if args.k is not None:
            cfg["k"] = args.k
        status = Runner(cfg, base, args.force).run(set(args.stages))
        print(json.dumps(status))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except StageError as exc:
        print(f"sphereflow: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"sphereflow {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
