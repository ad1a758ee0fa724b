"""Pipeline CLI: run the full analysis from one JSON config.

    epigrid run --config config.json --stage all [--force] [--seed N] [--threads N]

Stages execute in dependency order (ingest, weights, esda, features, train,
importance). Each stage writes its artifacts plus a manifest entry keyed by a
signature over input hashes and parameters; re-running a stage whose
signature and outputs are unchanged is a no-op unless --force is given.
Relative paths in the config resolve against the config file's directory.
Log lines on stdout are JSON events; artifacts carry no timestamps, so a run
is reproducible bit-for-bit from config + inputs + seeds.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import warnings
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from . import __version__, esda, features, geo, ingest, learn, raster
from .errors import ConfigError, DependencyError, EngineError, LockError

STAGES = ("ingest", "weights", "esda", "features", "train", "importance")

DEFAULT_LANDCOVER_CODES = {
    "trees": 1,
    "crops": 2,
    "built_up": 3,
    "bare_ground": 4,
    "rangeland": 5,
}

_STATIC_RASTERS = ("elevation", "population", "landcover")
_WEEKLY_RASTERS = ("precipitation", "temperature")


@dataclass
class PipelineConfig:
    disease: str
    surveillance_csv: Path
    districts_geojson: Path
    rasters: dict[str, Path]
    water_geojson: Path
    wealth_points_csv: Path
    panel_start: date
    n_weeks: int
    landcover_codes: dict[str, int]
    buffers_km: list[float]
    weights_kind: str
    weights_tolerance: float
    esda_n_perm: int
    esda_alpha: float
    esda_seed: int
    test_fraction: float
    learn_seed: int
    stratify: bool
    resample_method: str
    smote_k: int
    criterion: str
    n_trees: int
    max_depth: int | None
    min_leaf: int
    features_per_split: int | None
    importance_repeats: int
    precipitation_agg: str
    write_masked_raster: bool
    threads: int
    output_dir: Path


def load_config(path, seed_override=None, threads_override=None) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    base = path.parent

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base / p

    try:
        paths = doc["paths"]
        disease = doc["disease"]
        panel = doc["panel"]
        rasters = {k: resolve(v) for k, v in paths["rasters"].items()}
        cfg = PipelineConfig(
            disease=disease,
            surveillance_csv=resolve(paths["surveillance_csv"]),
            districts_geojson=resolve(paths["districts_geojson"]),
            rasters=rasters,
            water_geojson=resolve(paths["water_geojson"]),
            wealth_points_csv=resolve(paths["wealth_points_csv"]),
            panel_start=date.fromisoformat(panel["start"]),
            n_weeks=int(panel["n_weeks"]),
            landcover_codes={**DEFAULT_LANDCOVER_CODES, **doc.get("landcover_classes", {})},
            buffers_km=[float(b) for b in doc.get("buffers_km", [3.0])],
            weights_kind=doc.get("weights", {}).get("kind", "queen"),
            weights_tolerance=float(doc.get("weights", {}).get("tolerance", 1e-9)),
            esda_n_perm=int(doc.get("esda", {}).get("n_perm", 999)),
            esda_alpha=float(doc.get("esda", {}).get("alpha", 0.05)),
            esda_seed=int(doc.get("esda", {}).get("seed", 0)),
            test_fraction=float(doc.get("learn", {}).get("test_fraction", 0.2)),
            learn_seed=int(doc.get("learn", {}).get("seed", 0)),
            stratify=bool(doc.get("learn", {}).get("stratify", False)),
            resample_method=doc.get("learn", {}).get("resample", "none"),
            smote_k=int(doc.get("learn", {}).get("smote_k", 5)),
            criterion=doc.get("learn", {}).get("criterion", "gini"),
            n_trees=int(doc.get("learn", {}).get("n_trees", 100)),
            max_depth=doc.get("learn", {}).get("max_depth"),
            min_leaf=int(doc.get("learn", {}).get("min_leaf", 1)),
            features_per_split=doc.get("learn", {}).get("features_per_split"),
            importance_repeats=int(doc.get("learn", {}).get("importance_repeats", 5)),
            precipitation_agg=doc.get("precipitation_week_agg", "mean"),
            write_masked_raster=bool(doc.get("write_masked_raster", False)),
            threads=int(doc.get("threads", 1)),
            output_dir=resolve(doc["output_dir"]),
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: missing config key {exc}") from None
    if seed_override is not None:
        cfg.esda_seed = seed_override
        cfg.learn_seed = seed_override
    if threads_override is not None:
        cfg.threads = threads_override
    if not cfg.disease:
        raise ConfigError("disease must be non-empty")
    if cfg.n_weeks < 1:
        raise ConfigError("panel.n_weeks must be >= 1")
    if not cfg.buffers_km:
        raise ConfigError("buffers_km must name at least one buffer")
    for role in _STATIC_RASTERS + _WEEKLY_RASTERS:
        if role not in cfg.rasters:
            raise ConfigError(f"paths.rasters is missing role {role!r}")
    for p in [
        cfg.surveillance_csv,
        cfg.districts_geojson,
        cfg.water_geojson,
        cfg.wealth_points_csv,
        *cfg.rasters.values(),
    ]:
        if not Path(p).exists():
            raise ConfigError(f"input path does not exist: {p}")
    return cfg


# ---------------------------------------------------------------------------
# events, hashing, manifest


def _emit(event: dict) -> None:
    sys.stdout.write(json.dumps(event) + "\n")
    sys.stdout.flush()


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _hash_input(path: Path) -> str:
    path = Path(path)
    if path.is_dir():
        h = hashlib.sha256()
        for child in sorted(path.iterdir()):
            if child.is_file():
                h.update(child.name.encode())
                h.update(_sha256(child).encode())
        return h.hexdigest()
    return _sha256(path)


def _signature(inputs: dict[str, str], params: dict) -> str:
    doc = json.dumps({"inputs": inputs, "params": params}, sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()


class Manifest:
    def __init__(self, outdir: Path):
        self.path = outdir / "manifest.json"
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                self.doc = json.load(fh)
        else:
            self.doc = {"version": __version__, "stages": {}}

    def is_current(self, stage: str, signature: str, outdir: Path) -> bool:
        entry = self.doc["stages"].get(stage)
        if not entry or entry.get("signature") != signature:
            return False
        for name, digest in entry.get("outputs", {}).items():
            target = outdir / name
            if not target.exists() or _sha256(target) != digest:
                return False
        return True

    def record(self, stage: str, signature: str, inputs: dict, params: dict, outputs: list[Path], outdir: Path) -> None:
        self.doc["version"] = __version__
        self.doc["stages"][stage] = {
            "signature": signature,
            "inputs": inputs,
            "params": params,
            "outputs": {p.name: _sha256(p) for p in outputs},
        }
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump(self.doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


class _Lock:
    """One process per output directory."""

    def __init__(self, outdir: Path):
        self.path = outdir / ".lock"
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockError(
                f"{self.path} exists: another run owns this output directory "
                "(remove the file if that run is dead)"
            ) from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            self.path.unlink(missing_ok=True)
        return False


# ---------------------------------------------------------------------------
# geojson helpers


def _geometry_to_geojson(geom) -> dict:
    def ring_coords(ring):
        return [[float(x), float(y)] for x, y in ring]

    polys = [
        [ring_coords(part.shell)] + [ring_coords(h) for h in part.holes]
        for part in geom.parts
    ]
    if len(polys) == 1:
        return {"type": "Polygon", "coordinates": polys[0]}
    return {"type": "MultiPolygon", "coordinates": polys}


def _geojson_to_water(doc: dict) -> list:
    from . import geometry

    feats = []
    for feature in doc.get("features", []):
        g = feature.get("geometry") or {}
        t = g.get("type")
        coords = g.get("coordinates")
        if t == "Point":
            feats.append(geometry.PointSet(np.asarray([coords], dtype=float)))
        elif t == "MultiPoint":
            feats.append(geometry.PointSet(np.asarray(coords, dtype=float)))
        elif t == "LineString":
            feats.append(geometry.LineSet((np.asarray(coords, dtype=float),)))
        elif t == "MultiLineString":
            feats.append(geometry.LineSet(tuple(np.asarray(c, dtype=float) for c in coords)))
        elif t == "Polygon":
            feats.append(
                geometry.MultiPolygon(
                    (geometry.Polygon(
                        geometry.as_ring(coords[0]),
                        tuple(geometry.as_ring(r) for r in coords[1:]),
                    ),)
                )
            )
        elif t == "MultiPolygon":
            feats.append(
                geometry.MultiPolygon(
                    tuple(
                        geometry.Polygon(
                            geometry.as_ring(rings[0]),
                            tuple(geometry.as_ring(r) for r in rings[1:]),
                        )
                        for rings in coords
                    )
                )
            )
        else:
            raise ConfigError(f"unsupported water geometry type {t!r}")
    return feats


def _float_or_none(x) -> float | None:
    return None if x is None or (isinstance(x, float) and np.isnan(x)) else float(x)


def export_lisa_geojson(regions, result: esda.LisaResult, path) -> None:
    """One feature per region with adm_id, quadrant, local_I, p_value."""
    if len(regions) != len(result.quadrant):
        raise EngineError(
            f"{len(regions)} regions but {len(result.quadrant)} analysis rows"
        )
    feats = []
    for i, region in enumerate(regions):
        feats.append(
            {
                "type": "Feature",
                "properties": {
                    "adm_id": region.adm_id,
                    "quadrant": result.quadrant[i],
                    "local_I": _float_or_none(result.local_i[i]),
                    "p_value": _float_or_none(result.p_value[i]),
                },
                "geometry": _geometry_to_geojson(region.geometry),
            }
        )
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"type": "FeatureCollection", "features": feats}, fh)
        fh.write("\n")


def export_lisa_csv(regions, result: esda.LisaResult, path) -> None:
    if len(regions) != len(result.quadrant):
        raise EngineError(
            f"{len(regions)} regions but {len(result.quadrant)} analysis rows"
        )
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["adm_id", "local_i", "p_value", "quadrant"])
        for i, region in enumerate(regions):
            li = _float_or_none(result.local_i[i])
            pv = _float_or_none(result.p_value[i])
            writer.writerow(
                [
                    region.adm_id,
                    "" if li is None else repr(li),
                    "" if pv is None else repr(pv),
                    result.quadrant[i],
                ]
            )


# ---------------------------------------------------------------------------
# stage implementations


def _write_panel_csv(panel: ingest.SurveillancePanel, path) -> None:
    import csv as _csv

    counts = panel.counts_for(panel.diseases[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["adm_id", "week", "cases"])
        for i, adm in enumerate(panel.districts):
            for w in range(panel.n_weeks):
                writer.writerow([adm, w + 1, int(counts[i, w])])


def _read_panel_csv(path, disease: str, start: date, n_weeks: int) -> ingest.SurveillancePanel:
    import csv as _csv

    order: list[int] = []
    seen: dict[int, int] = {}
    rows: list[tuple[int, int, int]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.reader(fh)
        next(reader)
        for row in reader:
            if not row:
                continue
            adm, week, cases = int(row[0]), int(row[1]), int(row[2])
            if adm not in seen:
                seen[adm] = len(order)
                order.append(adm)
            rows.append((seen[adm], week, cases))
    counts = np.zeros((1, len(order), n_weeks), dtype=np.int64)
    for i, w, c in rows:
        counts[0, i, w - 1] = c
    return ingest.SurveillancePanel(
        diseases=(disease,),
        start=start,
        n_weeks=n_weeks,
        districts=tuple(order),
        counts=counts,
    )


def _weekly_raster_files(path: Path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix == ".asc")
        if not files:
            raise ConfigError(f"{path} holds no .asc rasters")
        return files
    return [path]


def _stage_ingest(cfg: PipelineConfig, out: Path) -> list[Path]:
    records, report = ingest.parse_surveillance_csv(cfg.surveillance_csv)
    if report.row_errors:
        _emit(
            {
                "event": "rows_rejected",
                "stage": "ingest",
                "count": len(report.row_errors),
                "first": report.row_errors[0].message,
            }
        )
    districts = ingest.parse_district_geojson(cfg.districts_geojson)
    panel, panel_report = ingest.build_panel(
        records, districts, cfg.panel_start, cfg.n_weeks, cfg.disease
    )
    if panel_report.unmatched_names:
        _emit(
            {
                "event": "unmatched_districts",
                "stage": "ingest",
                "names": sorted(",".join(k) for k in panel_report.unmatched_names),
            }
        )
    target = out / "panel.csv"
    _write_panel_csv(panel, target)
    return [target]


def _stage_weights(cfg: PipelineConfig, out: Path) -> list[Path]:
    districts = ingest.parse_district_geojson(cfg.districts_geojson)
    w = geo.build_contiguity_weights(districts, kind=cfg.weights_kind, tolerance=cfg.weights_tolerance)
    edges, islands = out / "weights.csv", out / "islands.csv"
    geo.write_weights_csv(w, edges, islands)
    return [edges, islands]


def _require(out: Path, filename: str, producer: str) -> Path:
    target = out / filename
    if not target.exists():
        raise DependencyError(
            f"{filename} is missing; run the {producer!r} stage first"
        )
    return target


def _stage_esda(cfg: PipelineConfig, out: Path) -> list[Path]:
    panel_path = _require(out, "panel.csv", "ingest")
    edges = _require(out, "weights.csv", "weights")
    islands = _require(out, "islands.csv", "weights")
    districts = ingest.parse_district_geojson(cfg.districts_geojson)
    panel = _read_panel_csv(panel_path, cfg.disease, cfg.panel_start, cfg.n_weeks)
    by_id = {adm: i for i, adm in enumerate(panel.districts)}
    totals_panel = panel.totals_by_district(cfg.disease)
    totals = np.array([totals_panel[by_id[r.adm_id]] for r in districts], dtype=float)
    w = geo.read_weights_csv(edges, islands, len(districts))
    moran = esda.morans_i(totals, w, n_perm=cfg.esda_n_perm, seed=cfg.esda_seed)
    lisa_result = esda.lisa(
        totals, w, n_perm=cfg.esda_n_perm, seed=cfg.esda_seed, alpha=cfg.esda_alpha
    )
    moran_path = out / "moran.json"
    with open(moran_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "disease": cfg.disease,
                "I": moran.I,
                "expected_I": moran.expected_I,
                "p_value": moran.p_value,
                "n_permutations": moran.n_permutations,
                "n_used": moran.n_used,
                "seed": cfg.esda_seed,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    geojson_path = out / "lisa.geojson"
    export_lisa_geojson(districts, lisa_result, geojson_path)
    csv_path = out / "lisa.csv"
    export_lisa_csv(districts, lisa_result, csv_path)
    return [moran_path, geojson_path, csv_path]


def _stage_features(cfg: PipelineConfig, out: Path) -> list[Path]:
    panel_path = _require(out, "panel.csv", "ingest")
    districts = ingest.parse_district_geojson(cfg.districts_geojson)
    panel = _read_panel_csv(panel_path, cfg.disease, cfg.panel_start, cfg.n_weeks)
    by_id = {adm: i for i, adm in enumerate(panel.districts)}
    if set(by_id) != {r.adm_id for r in districts}:
        raise DependencyError("panel.csv districts do not match the district file")
    region_order = [by_id[r.adm_id] for r in districts]
    # re-order the panel so its districts follow region order
    panel = ingest.SurveillancePanel(
        diseases=panel.diseases,
        start=panel.start,
        n_weeks=panel.n_weeks,
        districts=tuple(panel.districts[i] for i in region_order),
        counts=panel.counts[:, region_order, :],
    )

    elevation_grid = ingest.parse_ascii_grid(cfg.rasters["elevation"])
    population_grid = ingest.parse_ascii_grid(cfg.rasters["population"])
    landcover_grid = ingest.parse_ascii_grid(cfg.rasters["landcover"])

    elev = np.array(
        [np.nan if z.mean is None else z.mean for z in raster.zonal_mean(elevation_grid, districts)]
    )
    pop_sum = np.array([v for _, v in raster.zonal_sum(population_grid, districts)])

    with open(cfg.water_geojson, encoding="utf-8") as fh:
        water = _geojson_to_water(json.load(fh))
    outputs: list[Path] = []
    feature_buffer = cfg.buffers_km[0]
    near_water = None
    for buffer_km in cfg.buffers_km:
        vals = np.array(
            [v for _, v in raster.population_near_water(population_grid, water, buffer_km, districts)]
        )
        if buffer_km == feature_buffer:
            near_water = vals
        if cfg.write_masked_raster:
            mask = raster.water_buffer_mask(population_grid, water, buffer_km)
            masked = raster.masked_population(population_grid, mask)
            masked_path = out / f"population_within_{buffer_km:g}km.asc"
            ingest.write_ascii_grid(masked, masked_path)
            outputs.append(masked_path)

    codes = cfg.landcover_codes
    tabulation = raster.tabulate_area(landcover_grid, districts, list(codes.values()))
    class_pop = raster.class_population(
        landcover_grid, population_grid, districts, list(codes.values())
    )
    composites: dict[str, np.ndarray] = {}
    composite_params: dict[str, dict] = {}
    for cls_name, code in codes.items():
        counts = np.array([t.counts[code] for t in tabulation], dtype=float)
        fractions = np.array([t.fractions[code] for t in tabulation], dtype=float)
        pops = np.array([v for _, v in class_pop[code]], dtype=float)
        sc_counts, p_counts = features.minmax_scale(counts)
        sc_frac, p_frac = features.minmax_scale(fractions)
        sc_pop, p_pop = features.minmax_scale(pops)
        composites[cls_name] = sc_counts + sc_frac + sc_pop
        composite_params[cls_name] = {
            "area": {"low": p_counts.low, "high": p_counts.high},
            "fraction": {"low": p_frac.low, "high": p_frac.high},
            "population": {"low": p_pop.low, "high": p_pop.high},
        }

    wealth = features.points_to_district_values(
        ingest.parse_points_csv(cfg.wealth_points_csv), districts
    )

    def weekly_dataset(role: str, agg: str) -> features.DistrictDataset:
        files = _weekly_raster_files(cfg.rasters[role])
        cols = []
        for f in files:
            grid = ingest.parse_ascii_grid(f)
            cols.append(
                [np.nan if z.mean is None else z.mean for z in raster.zonal_mean(grid, districts)]
            )
        values = np.asarray(cols, dtype=float).T  # (districts, samples)
        if values.shape[1] == 1:
            return features.DistrictDataset(values[:, 0], agg=agg)
        return features.DistrictDataset(values, agg=agg)

    precip = weekly_dataset("precipitation", cfg.precipitation_agg)
    temp = weekly_dataset("temperature", "mean")

    datasets = {
        "precipitation": precip,
        "temperature": temp,
        "population_density": features.DistrictDataset(pop_sum),
        "population_near_water": features.DistrictDataset(near_water),
        "relative_wealth": features.DistrictDataset(wealth),
        "elevation": features.DistrictDataset(elev),
    }
    for cls_name in features.LANDCOVER_CLASSES:
        datasets[cls_name] = features.DistrictDataset(composites[cls_name])
    table = features.assemble_feature_table(panel, datasets, cfg.disease)
    table_path = out / "features.csv"
    features.write_feature_csv(table, table_path)

    meta = {
        "disease": cfg.disease,
        "cadences": {
            "precipitation": "weekly" if precip.values.ndim == 2 else "static",
            "temperature": "weekly" if temp.values.ndim == 2 else "static",
            "elevation": "static",
            "population_density": "static",
            "population_near_water": "static",
            "relative_wealth": "static",
            "landcover": "static",
        },
        "precipitation_week_agg": cfg.precipitation_agg,
        "feature_buffer_km": feature_buffer,
        "buffers_km": cfg.buffers_km,
        "landcover_codes": codes,
        "composite_minmax_params": composite_params,
    }
    meta_path = out / "features_meta.json"
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [table_path, meta_path, *outputs]


def _split_and_scale(cfg: PipelineConfig, table):
    spec = learn.SplitSpec(
        test_fraction=cfg.test_fraction, seed=cfg.learn_seed, stratify=cfg.stratify
    )
    train, test = learn.random_split(table, spec)
    scaler = features.TableScaler("robust").fit(train.X)
    return train.with_X(scaler.transform(train.X)), test.with_X(scaler.transform(test.X)), scaler


def _stage_train(cfg: PipelineConfig, out: Path) -> list[Path]:
    table_path = _require(out, "features.csv", "features")
    table = features.read_feature_csv(table_path)
    train, test, scaler = _split_and_scale(cfg, table)
    resampled = learn.resample(
        train, method=cfg.resample_method, seed=cfg.learn_seed, k=cfg.smote_k
    )
    model = learn.train_forest(
        resampled.table,
        criterion=cfg.criterion,
        n_trees=cfg.n_trees,
        max_depth=cfg.max_depth,
        min_leaf=cfg.min_leaf,
        features_per_split=cfg.features_per_split,
        seed=cfg.learn_seed,
        n_threads=cfg.threads,
    )
    labels, scores = learn.predict(model, test)
    report = learn.evaluate(test.labels, labels, scores)

    model_doc = learn.forest_to_dict(model)
    model_doc["scaler"] = scaler.to_dict()
    model_doc["split"] = {
        "test_fraction": cfg.test_fraction,
        "seed": cfg.learn_seed,
        "stratify": cfg.stratify,
    }
    model_doc["disease"] = cfg.disease
    model_path = out / "model.json"
    with open(model_path, "w", encoding="utf-8") as fh:
        json.dump(model_doc, fh)
        fh.write("\n")

    metrics_path = out / "metrics.json"
    doc = {"disease": cfg.disease, **report.to_dict()}
    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    metrics_csv = out / "metrics.csv"
    import csv as _csv

    with open(metrics_csv, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        names = ["accuracy", "balanced_accuracy", "mcc", "roc_auc", "f1", "precision", "recall"]
        writer.writerow(["metric", "value"])
        for name in names:
            writer.writerow([name, repr(getattr(report, name))])
        for part, value in zip(("tp", "fp", "fn", "tn"), report.confusion):
            writer.writerow([part, value])
    return [model_path, metrics_path, metrics_csv]


def _stage_importance(cfg: PipelineConfig, out: Path) -> list[Path]:
    table_path = _require(out, "features.csv", "features")
    model_path = _require(out, "model.json", "train")
    with open(model_path, encoding="utf-8") as fh:
        model_doc = json.load(fh)
    model = learn.forest_from_dict(model_doc)
    scaler = features.TableScaler.from_dict(model_doc["scaler"])
    split = model_doc["split"]
    table = features.read_feature_csv(table_path)
    spec = learn.SplitSpec(
        test_fraction=split["test_fraction"], seed=split["seed"], stratify=split["stratify"]
    )
    _, test = learn.random_split(table, spec)
    test = test.with_X(scaler.transform(test.X))
    entries = learn.permutation_importance(
        model, test, metric="f1", n_repeats=cfg.importance_repeats, seed=cfg.learn_seed
    )
    import csv as _csv

    csv_path = out / "importance.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["feature", "importance", "std"])
        for e in entries:
            writer.writerow([e.feature, repr(e.importance), repr(e.std)])
    json_path = out / "importance.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "disease": cfg.disease,
                "metric": "f1",
                "n_repeats": cfg.importance_repeats,
                "ranking": [
                    {"feature": e.feature, "importance": e.importance, "std": e.std}
                    for e in entries
                ],
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    return [csv_path, json_path]


_STAGE_FUNCS = {
    "ingest": _stage_ingest,
    "weights": _stage_weights,
    "esda": _stage_esda,
    "features": _stage_features,
    "train": _stage_train,
    "importance": _stage_importance,
}


def _stage_inputs(cfg: PipelineConfig, stage: str, out: Path) -> dict[str, str]:
    raw = {
        "ingest": [cfg.surveillance_csv, cfg.districts_geojson],
        "weights": [cfg.districts_geojson],
        "esda": [out / "panel.csv", out / "weights.csv", out / "islands.csv", cfg.districts_geojson],
        "features": [
            out / "panel.csv",
            cfg.districts_geojson,
            cfg.water_geojson,
            cfg.wealth_points_csv,
            *cfg.rasters.values(),
        ],
        "train": [out / "features.csv"],
        "importance": [out / "features.csv", out / "model.json"],
    }[stage]
    digests = {}
    for p in raw:
        p = Path(p)
        digests[p.name] = _hash_input(p) if p.exists() else "missing"
    return digests


def _stage_params(cfg: PipelineConfig, stage: str) -> dict:
    common = {"disease": cfg.disease, "start": cfg.panel_start.isoformat(), "n_weeks": cfg.n_weeks}
    if stage == "ingest":
        return common
    if stage == "weights":
        return {"kind": cfg.weights_kind, "tolerance": cfg.weights_tolerance}
    if stage == "esda":
        return {
            **common,
            "n_perm": cfg.esda_n_perm,
            "alpha": cfg.esda_alpha,
            "seed": cfg.esda_seed,
        }
    if stage == "features":
        return {
            **common,
            "landcover_codes": cfg.landcover_codes,
            "buffers_km": cfg.buffers_km,
            "precipitation_agg": cfg.precipitation_agg,
            "write_masked_raster": cfg.write_masked_raster,
        }
    if stage == "train":
        return {
            "disease": cfg.disease,
            "test_fraction": cfg.test_fraction,
            "seed": cfg.learn_seed,
            "stratify": cfg.stratify,
            "resample": cfg.resample_method,
            "smote_k": cfg.smote_k,
            "criterion": cfg.criterion,
            "n_trees": cfg.n_trees,
            "max_depth": cfg.max_depth,
            "min_leaf": cfg.min_leaf,
            "features_per_split": cfg.features_per_split,
        }
    if stage == "importance":
        return {"n_repeats": cfg.importance_repeats, "seed": cfg.learn_seed}
    raise EngineError(f"unknown stage {stage!r}")


def run(cfg: PipelineConfig, stage: str = "all", force: bool = False) -> int:
    """Execute one stage or the whole pipeline; returns a process exit code."""
    wanted = list(STAGES) if stage == "all" else [stage]
    if stage != "all" and stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    with _Lock(out):
        manifest = Manifest(out)
        for name in wanted:
            inputs = _stage_inputs(cfg, name, out)
            params = _stage_params(cfg, name)
            signature = _signature(inputs, params)
            if not force and manifest.is_current(name, signature, out):
                _emit({"event": "stage_skip", "stage": name, "reason": "signature match"})
                continue
            _emit({"event": "stage_start", "stage": name})
            try:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    outputs = _STAGE_FUNCS[name](cfg, out)
            except EngineError as exc:
                exc.stage = name  # surfaced in the structured error report
                raise
            for warning in caught:
                _emit({"event": "warning", "stage": name, "message": str(warning.message)})
            # inputs may have been produced by earlier stages this run
            inputs = _stage_inputs(cfg, name, out)
            signature = _signature(inputs, params)
            manifest.record(name, signature, inputs, params, outputs, out)
            _emit(
                {
                    "event": "stage_end",
                    "stage": name,
                    "outputs": [p.name for p in outputs],
                }
            )
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="epigrid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run pipeline stages from a JSON config")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--stage", default="all", choices=("all",) + STAGES)
    run_p.add_argument("--force", action="store_true", help="re-run even when the manifest matches")
    run_p.add_argument("--seed", type=int, default=None, help="override esda and learn seeds")
    run_p.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)
    stage = args.stage
    try:
        cfg = load_config(args.config, seed_override=args.seed, threads_override=args.threads)
        return run(cfg, stage=stage, force=args.force)
    except EngineError as exc:
        report = {
            "error": {
                "stage": getattr(exc, "stage", stage),
                "type": type(exc).__name__,
                "message": str(exc),
            }
        }
        sys.stderr.write(json.dumps(report) + "\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
