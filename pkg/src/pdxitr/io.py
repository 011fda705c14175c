"""File formats: TSV ingestion, rule serialization, reports, manifests.

Features TSV: header ``line_id<TAB>feature...``, one row per line.
Responses TSV: either precomputed outcomes
(``line_id, treatment, neg_bar, log_ttd``) or raw caliper trajectories
(``line_id, treatment, day, major_mm, minor_mm``), detected by header.
All writes are atomic (temp file + rename).
"""

from __future__ import annotations

import base64
import csv
import hashlib
import io as _io
import json
import os
import pickle
from pathlib import Path

import numpy as np

from .core import DatasetError, FeatureMatrix, PdxDataset, ResponseRecord, TreatmentId
from .itr import NodeRule, TreeItr
from .learners import DecisionFunction, Forest, LinearModel
from .outcomes import VolumeTrajectory, compute_bar, compute_ttd
from .tree import CenteredRewards, Dendrogram, TreatmentGrouping

TREE_ITR_FORMAT = "pdxitr-treeitr-1"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# TSV ingestion


def read_features_tsv(path) -> FeatureMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if not header or header[0] != "line_id":
            raise DatasetError(f"{path}: first column must be line_id")
        feature_names = tuple(header[1:])
        line_ids = []
        rows = []
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}:{ln}: expected {len(header)} columns, got {len(row)}")
            line_ids.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DatasetError(f"{path}:{ln}: {exc}") from exc
    return FeatureMatrix(tuple(line_ids), feature_names, np.array(rows))


def write_features_tsv(path, features: FeatureMatrix) -> None:
    buf = _io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(["line_id", *features.feature_names])
    for line, row in zip(features.line_ids, features.values):
        writer.writerow([line, *[repr(float(v)) for v in row]])
    atomic_write_text(path, buf.getvalue())


def read_responses_tsv(path, response_kind: str = "neg_bar", untreated_label: str = "untreated"):
    """Parse either response schema into ResponseRecords.

    For trajectory input, outcomes are computed per (line, treatment)
    trajectory.  ``response_kind`` selects which outcome becomes the
    primary response; the other is kept as the auxiliary response.
    """
    if response_kind not in ("neg_bar", "log_ttd"):
        raise DatasetError(f"unknown response kind {response_kind!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path}: empty file")
        rows = [r for r in reader if r]

    def record(line, trt, neg_bar, log_ttd):
        t = TreatmentId(trt, is_untreated=(trt == untreated_label))
        primary, aux = (neg_bar, log_ttd) if response_kind == "neg_bar" else (log_ttd, neg_bar)
        return ResponseRecord(line, t, primary, aux)

    if header == ["line_id", "treatment", "neg_bar", "log_ttd"]:
        records = []
        for ln, row in enumerate(rows, start=2):
            try:
                records.append(record(row[0], row[1], float(row[2]), float(row[3])))
            except (IndexError, ValueError) as exc:
                raise DatasetError(f"{path}:{ln}: {exc}") from exc
        return tuple(records)

    if header == ["line_id", "treatment", "day", "major_mm", "minor_mm"]:
        series: dict[tuple[str, str], list[tuple[float, float, float]]] = {}
        for ln, row in enumerate(rows, start=2):
            try:
                series.setdefault((row[0], row[1]), []).append(
                    (float(row[2]), float(row[3]), float(row[4]))
                )
            except (IndexError, ValueError) as exc:
                raise DatasetError(f"{path}:{ln}: {exc}") from exc
        records = []
        for (line, trt), points in sorted(series.items()):
            points.sort()
            traj = VolumeTrajectory.from_axes(
                [p[0] for p in points], [(p[1], p[2]) for p in points]
            )
            records.append(record(line, trt, compute_bar(traj), compute_ttd(traj).log_ttd))
        return tuple(records)

    raise DatasetError(f"{path}: unrecognized response header {header}")


def write_responses_tsv(path, records) -> None:
    buf = _io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(["line_id", "treatment", "neg_bar", "log_ttd"])
    for r in records:
        aux = r.response_aux if r.response_aux is not None else float("nan")
        writer.writerow([r.line_id, r.treatment.id, repr(float(r.response)), repr(float(aux))])
    atomic_write_text(path, buf.getvalue())


def load_dataset(features_path, responses_path, response_kind="neg_bar", untreated_label="untreated"):
    features = read_features_tsv(features_path)
    records = read_responses_tsv(responses_path, response_kind, untreated_label)
    return PdxDataset(features, records)


# ---------------------------------------------------------------------------
# Rule serialization


def _treatment_to_dict(t: TreatmentId) -> dict:
    return {"id": t.id, "is_untreated": t.is_untreated}


def _treatment_from_dict(d: dict) -> TreatmentId:
    return TreatmentId(d["id"], d["is_untreated"])


def _model_to_dict(model) -> dict:
    if isinstance(model, LinearModel):
        return {
            "type": "linear",
            "intercept": model.intercept,
            "coefficients": model.coefficients.tolist(),
            "penalty": model.penalty,
        }
    if isinstance(model, DecisionFunction):
        out = {"type": "decision", "form": model.form, "penalty": model.penalty, "bias": model.bias}
        if model.form == "linear":
            out["weights"] = model.weights.tolist()
        else:
            out["support"] = model.support.tolist()
            out["dual_coef"] = model.dual_coef.tolist()
            out["bandwidth"] = model.bandwidth
        return out
    if isinstance(model, Forest):
        # Tree ensembles have no compact text form; embed an opaque blob.
        return {"type": "forest", "blob": base64.b64encode(pickle.dumps(model)).decode("ascii")}
    raise DatasetError(f"cannot serialize model of type {type(model).__name__}")


def _model_from_dict(d: dict):
    if d["type"] == "linear":
        return LinearModel(d["intercept"], np.array(d["coefficients"]), d["penalty"])
    if d["type"] == "decision":
        if d["form"] == "linear":
            return DecisionFunction("linear", d["penalty"], d["bias"], weights=np.array(d["weights"]))
        return DecisionFunction(
            "gaussian",
            d["penalty"],
            d["bias"],
            support=np.array(d["support"]),
            dual_coef=np.array(d["dual_coef"]),
            bandwidth=d["bandwidth"],
        )
    if d["type"] == "forest":
        return pickle.loads(base64.b64decode(d["blob"]))
    raise DatasetError(f"unknown serialized model type {d['type']!r}")


def serialize_tree_itr(itr: TreeItr) -> str:
    g = itr.grouping
    doc = {
        "format": TREE_ITR_FORMAT,
        "variant": itr.variant,
        "n_features": itr.n_features,
        "seed": itr.seed,
        "grouping": {
            "treatments": [_treatment_to_dict(t) for t in g.treatments],
            "null_group": [_treatment_to_dict(t) for t in g.null_group],
            "groups": [list(grp) for grp in g.groups],
            "internal_nodes": list(g.internal_nodes),
            "c1": g.c1,
            "c2": g.c2,
            "dendrogram": {
                "n_leaves": g.dendrogram.n_leaves,
                "merges": [[l, r, h] for l, r, h in g.dendrogram.merges],
            },
        },
        "step0": _model_to_dict(itr.step0_model),
        "nodes": [
            {
                "node_id": rule.node_id,
                "left": rule.left_child,
                "right": rule.right_child,
                "kind": rule.kind,
                "left_model": _model_to_dict(rule.left_model) if rule.left_model else None,
                "right_model": _model_to_dict(rule.right_model) if rule.right_model else None,
                "decision": _model_to_dict(rule.decision) if rule.decision else None,
            }
            for rule in itr.node_rules.values()
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def deserialize_tree_itr(text: str) -> TreeItr:
    doc = json.loads(text)
    if doc.get("format") != TREE_ITR_FORMAT:
        raise DatasetError(f"unsupported rule format {doc.get('format')!r}")
    gd = doc["grouping"]
    dend = Dendrogram(
        gd["dendrogram"]["n_leaves"],
        tuple((m[0], m[1], m[2]) for m in gd["dendrogram"]["merges"]),
    )
    grouping = TreatmentGrouping(
        dendrogram=dend,
        treatments=tuple(_treatment_from_dict(t) for t in gd["treatments"]),
        null_group=tuple(_treatment_from_dict(t) for t in gd["null_group"]),
        groups=tuple(tuple(grp) for grp in gd["groups"]),
        internal_nodes=tuple(gd["internal_nodes"]),
        c1=gd["c1"],
        c2=gd["c2"],
    )
    rules = {}
    for nd in doc["nodes"]:
        rules[nd["node_id"]] = NodeRule(
            nd["node_id"],
            nd["left"],
            nd["right"],
            nd["kind"],
            left_model=_model_from_dict(nd["left_model"]) if nd["left_model"] else None,
            right_model=_model_from_dict(nd["right_model"]) if nd["right_model"] else None,
            decision=_model_from_dict(nd["decision"]) if nd["decision"] else None,
        )
    return TreeItr(
        grouping=grouping,
        node_rules=rules,
        step0_model=_model_from_dict(doc["step0"]),
        variant=doc["variant"],
        learner=None,
        n_features=doc["n_features"],
        seed=doc["seed"],
    )


# ---------------------------------------------------------------------------
# Reports


REPORT_COLUMNS = [
    "method",
    "response_kind",
    "L_sup",
    "v_bar",
    "sd",
    "v_obs",
    "v_opt",
    "p_opt",
    "p_obs",
    "n_folds",
    "skipped_folds",
]


def report_rows_to_csv(rows: list[dict]) -> str:
    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, delimiter=",", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in REPORT_COLUMNS})
    return buf.getvalue()


def long_format_csv(rows: list[dict], by: str) -> str:
    """Plot-ready long format: one (group, method, p_opt) row per cell."""
    buf = _io.StringIO()
    writer = csv.writer(buf, delimiter=",", lineterminator="\n")
    writer.writerow([by, "method", "p_opt"])
    for row in rows:
        writer.writerow([row[by], row["method"], row["p_opt"]])
    return buf.getvalue()
