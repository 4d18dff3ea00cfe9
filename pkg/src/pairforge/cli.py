"""The forge command line: synth -> select -> generate -> label -> build-manifest
-> eval -> report, plus the study service, curation export, ensembling,
judge scoring, and the throughput probe."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .jsonl import read_jsonl, write_jsonl

EXPANSION_SWEEP = (0.0, 0.05, 0.10, 0.25, 0.50, 0.75, 1.00)
SELF_PASTE_SWEEP = (1, 3, 5, 10, "all")


@click.group()
def main():
    """Build and evaluate spot-the-inconsistent-object image pairs."""


@main.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--scenes", default=4, show_default=True)
@click.option("--frames", default=4, show_default=True)
@click.option("--objects", default=7, show_default=True)
@click.option("--width", default=512, show_default=True)
@click.option("--height", default=384, show_default=True)
@click.option("--seed", default=0, show_default=True)
def synth(out, scenes, frames, objects, width, height, seed):
    """Render a procedural multi-view corpus (demo / testing input)."""
    from .synthetic import SceneSpec, make_corpus

    spec = SceneSpec(width=width, height=height, n_frames=frames, n_objects=objects)
    ids = make_corpus(out, scenes, seed, spec)
    click.echo(f"wrote {len(ids)} scenes under {out}")


def _selection_config(config, seed, **overrides):
    from .triplet_select import SelectionConfig

    fields = {}
    if config:
        fields.update(json.loads(Path(config).read_text()))
    fields.update({k: v for k, v in overrides.items() if v is not None})
    if seed is not None:
        fields["rng_seed"] = seed
    return SelectionConfig(**fields)


@main.command()
@click.option("--bundle", "--scenes", "scenes", required=True, type=click.Path(exists=True), help="corpus root or one scene dir")
@click.option("--config", type=click.Path(exists=True), help="JSON with selection thresholds")
@click.option("--n", default=20, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--per-scene-cap", default=2, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--dump-all", is_flag=True, help="write every candidate with its verdict instead of sampling")
def select(scenes, config, n, seed, per_scene_cap, out, dump_all):
    """Sample passing (reference, edited, donor, object) candidates."""
    from .scene_bundle import load_bundle, scan_scenes
    from .triplet_select import enumerate_candidates, sample_passing_corpus

    cfg = _selection_config(config, seed)
    paths = scan_scenes(scenes)
    if not paths:
        raise click.ClickException(f"no scene bundles under {scenes}")
    if dump_all:
        records = []
        for p in paths:
            bundle = load_bundle(p)
            records.extend(c.to_record() for c in enumerate_candidates(bundle, cfg))
        write_jsonl(out, records)
        click.echo(f"wrote {len(records)} candidates (all verdicts) to {out}")
        return
    cands, exhausted = sample_passing_corpus(
        (load_bundle(p) for p in paths), cfg, n, per_scene_cap=per_scene_cap
    )
    write_jsonl(out, [c.to_record() for c in cands])
    msg = f"wrote {len(cands)} passing candidates to {out}"
    if exhausted:
        msg += f" (exhausted before reaching n={n})"
    click.echo(msg)


def _load_candidates(path):
    from .triplet_select import TripletCandidate

    return [TripletCandidate.from_record(r) for r in read_jsonl(path)]


@main.command()
@click.option("--candidates", required=True, type=click.Path(exists=True))
@click.option("--scenes", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--variant", default="inconsistent", show_default=True)
@click.option("--expansion", default=0.05, show_default=True)
@click.option("--self-paste-count", default=None, help="k or 'all' for multi_self_paste")
@click.option("--backend", default="native", show_default=True, type=click.Choice(["native", "remote"]))
@click.option("--remote-endpoint", default=None)
@click.option("--seed", default=0, show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--sweep", type=click.Choice(["expansion", "self-paste"]), default=None,
              help="emit the full treatment matrix as per-treatment subdirectories")
def generate(candidates, scenes, out, variant, expansion, self_paste_count, backend, remote_endpoint, seed, workers, sweep):
    """Build edited pairs (view1/view2 PNGs + provenance) for the candidates."""
    from .compositor import generate_pairs

    cands = _load_candidates(candidates)
    if not cands:
        raise click.ClickException("candidate file is empty")
    if self_paste_count is not None and self_paste_count != "all":
        self_paste_count = int(self_paste_count)

    def run_one(out_dir, **kw):
        metas, stages = generate_pairs(scenes, cands, out_dir, rng_seed=seed, backend=backend,
                                       remote_endpoint=remote_endpoint, workers=workers, **kw)
        write_jsonl(Path(out_dir) / "pairs.jsonl", metas)
        click.echo(f"{out_dir}: {len(metas)} pairs (stage seconds: " +
                   ", ".join(f"{k}={v:.2f}" for k, v in sorted(stages.items())) + ")")

    if sweep == "expansion":
        for exp in EXPANSION_SWEEP:
            run_one(Path(out) / f"exp{exp * 100:g}", variant="expansion_sweep", expansion=exp)
    elif sweep == "self-paste":
        for k in SELF_PASTE_SWEEP:
            run_one(Path(out) / f"selfpaste_{k}", variant="multi_self_paste", expansion=expansion, self_paste_count=k)
    else:
        run_one(Path(out), variant=variant, expansion=expansion, self_paste_count=self_paste_count)


@main.command()
@click.option("--pairs", required=True, type=click.Path(exists=True))
@click.option("--scenes", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="answer-key JSONL")
@click.option("--glyph-height", default=0.035, show_default=True)
def label(pairs, scenes, out, glyph_height):
    """Label reference views (view1_labeled.png) and emit the answer key."""
    from .labeling import LabelStyle, UnlabelablePairError, assign_letters, key_record, render_labels, select_labelable
    from .scene_bundle import load_bundle
    from PIL import Image

    style = LabelStyle(glyph_height=glyph_height)
    bundles = {}
    keys = []
    skipped = 0
    for meta_path in sorted(Path(pairs).glob("*/meta.json")):
        meta = json.loads(meta_path.read_text())
        sid = meta["scene_id"]
        if sid not in bundles:
            bundles[sid] = load_bundle(Path(scenes) / sid)
        bundle = bundles[sid]
        frame = bundle.frame(meta["ref_id"])
        try:
            labelable = select_labelable(frame, meta["answer_object_id"])
        except UnlabelablePairError as exc:
            click.echo(f"skipping {meta['pair_id']}: {exc}", err=True)
            skipped += 1
            continue
        assignment = assign_letters(frame, labelable, meta["answer_object_id"])
        labeled = render_labels(frame.rgb, assignment, style)
        Image.fromarray(labeled).save(meta_path.parent / "view1_labeled.png")
        cats = {oid: entry.get("category", "unknown") for oid, entry in bundle.instance_table.items()}
        keys.append(key_record(meta["pair_id"], assignment, cats))
    write_jsonl(out, keys)
    click.echo(f"labeled {len(keys)} pairs ({skipped} unlabelable) -> {out}")


@main.command("build-manifest")
@click.option("--pairs", required=True, type=click.Path(exists=True))
@click.option("--keys", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--allow-partial", is_flag=True)
@click.option("--categorize", is_flag=True, help="assign scene categories via an external labeler")
@click.option("--labeler-endpoint", default=None, help="chat endpoint base URL for captioning + categorization")
@click.option("--labeler-model", default="labeler")
def build_manifest_cmd(pairs, keys, out, allow_partial, categorize, labeler_endpoint, labeler_model):
    """Join pairs + keys into the benchmark manifest with bins and edges."""
    from .benchmark_build import build_manifest, categorize_scenes, save_manifest

    key_records = list(read_jsonl(keys))
    scene_categories = None
    if categorize:
        if not labeler_endpoint:
            raise click.ClickException("--categorize needs --labeler-endpoint")
        from .harness.client import ModelEndpoint
        from .harness.vqascore import captioner_from_endpoint

        ep = ModelEndpoint(name=labeler_model, base_url=labeler_endpoint, model_id=labeler_model)
        captioner = captioner_from_endpoint(ep)

        def assign(captions):
            from .harness.client import query_model

            numbered = "\n".join(f"{i + 1}. {c}" for i, c in enumerate(captions))
            raw = query_model(ep, [{
                "role": "user",
                "content": "Group these scene captions into at most 9 lowercase category tokens. "
                "Reply with one category per line, in input order.\n" + numbered,
            }])
            return [line.strip() for line in raw.strip().splitlines()]

        images = []
        for meta_path in sorted(Path(pairs).glob("*/meta.json")):
            meta = json.loads(meta_path.read_text())
            images.append((meta["pair_id"], str(meta_path.parent / "view1.png")))
        scene_categories, provenance = categorize_scenes(images, captioner, assign)
        click.echo(f"scene categorization: {provenance}")

    manifest = build_manifest(pairs, key_records, allow_partial=allow_partial, scene_categories=scene_categories,
                              config={"pairs_root": str(pairs), "keys": str(keys)})
    save_manifest(manifest, out)
    click.echo(f"manifest with {len(manifest.items)} items -> {out}")


def _model_from_config(path):
    from .harness.client import endpoint_from_config

    cfg = json.loads(Path(path).read_text())
    kind = cfg.get("kind", "chat")
    name = cfg.get("name") or kind
    if kind == "scripted-key":
        keys = {r["pair_id"]: r["answer_letter"] for r in read_jsonl(cfg["keys_path"])}
        cfg = {"kind": "scripted-key", "keys": keys}
    elif kind != "chat":
        cfg = {k: v for k, v in cfg.items() if k != "name"}
    return endpoint_from_config(cfg), name


@main.command("eval")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--endpoint", required=True, type=click.Path(exists=True), help="model config JSON")
@click.option("--out", required=True, type=click.Path())
@click.option("--workers", default=1, show_default=True)
def eval_cmd(manifest, endpoint, out, workers):
    """Run the forced-choice evaluation and append the trial log."""
    from .benchmark_build import load_manifest
    from .harness.client import run_eval

    m = load_manifest(manifest)
    model, name = _model_from_config(endpoint)
    trials = run_eval(m, model, model_name=name, out_path=out, max_workers=workers)
    correct = sum(t.correct for t in trials)
    click.echo(f"{name}: {correct}/{len(trials)} correct -> {out}")


def _trials_by_model(paths):
    from .harness.scoring import Trial

    out = {}
    for p in paths:
        for rec in read_jsonl(p):
            t = Trial.from_record(rec)
            out.setdefault(t.model, []).append(t)
    return out


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--trials", "trials_paths", required=True, multiple=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="report directory")
@click.option("--strict", is_flag=True, help="score missing trials as incorrect")
def report(manifest, trials_paths, out, strict):
    """Accuracy tables (JSON + CSV) and figures for one or more trial logs."""
    from .benchmark_build import load_manifest
    from .reporting import write_report

    m = load_manifest(manifest)
    by_model = _trials_by_model(trials_paths)
    rep = write_report(by_model, m, out, strict=strict)
    for name, entry in sorted(rep["models"].items()):
        acc = entry["overall"]["accuracy"]
        click.echo(f"{name}: accuracy {acc:.3f} over {entry['overall']['n']} items" if acc is not None else name)
    click.echo(f"report written under {out}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--trials", "trials_paths", required=True, multiple=True, type=click.Path(exists=True))
@click.option("--baseline", required=True, help="weight denominator model name")
@click.option("--out", required=True, type=click.Path())
def ensemble(manifest, trials_paths, baseline, out):
    """Accuracy-weighted vote across models."""
    from .benchmark_build import load_manifest
    from .harness.scoring import ensemble as run_ensemble

    m = load_manifest(manifest)
    by_model = _trials_by_model(trials_paths)
    result = run_ensemble(by_model, m, baseline_model=baseline)
    Path(out).write_text(json.dumps(result, indent=1, sort_keys=True))
    click.echo(f"ensemble accuracy {result['accuracy']:.3f} over {result['n']} items -> {out}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--judge", required=True, type=click.Path(exists=True), help="judge endpoint config JSON")
@click.option("--captioner", required=True, type=click.Path(exists=True), help="captioner endpoint config JSON")
@click.option("--human-trials", default=None, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def vqascore(manifest, judge, captioner, human_trials, out):
    """Yes-probability judging of clean vs edited pairs."""
    from .benchmark_build import load_manifest
    from .harness.client import ModelEndpoint
    from .harness.scoring import Trial
    from .harness.vqascore import captioner_from_endpoint, judge_from_endpoint, vqascore_eval

    m = load_manifest(manifest)
    jcfg = json.loads(Path(judge).read_text())
    ccfg = json.loads(Path(captioner).read_text())
    judge_fn = judge_from_endpoint(ModelEndpoint(**{k: v for k, v in jcfg.items() if k != "kind"}))
    captioner_fn = captioner_from_endpoint(ModelEndpoint(**{k: v for k, v in ccfg.items() if k != "kind"}))
    humans = None
    if human_trials:
        humans = [Trial.from_record(r) for r in read_jsonl(human_trials)]
    result = vqascore_eval(m, judge_fn, captioner_fn, human_trials=humans)
    Path(out).write_text(json.dumps(result, indent=1, sort_keys=True))
    click.echo(f"pairwise {result['pairwise_acc']} pearson {result['pearson_r']} kendall {result['kendall_tau']} -> {out}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--logs", required=True, type=click.Path(), help="append-only log directory")
@click.option("--ui", default=None, type=click.Path(), help="built frontend bundle to serve at /")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8377, show_default=True)
@click.option("--seed", default=0, show_default=True)
def serve(manifest, logs, ui, host, port, seed):
    """Run the human study / vetting HTTP service."""
    import uvicorn

    from .benchmark_build import load_manifest
    from .study_service import StudyState, create_app

    m = load_manifest(manifest)
    state = StudyState(m, pairs_root=Path(manifest).parent, log_dir=logs, rng_seed=seed)
    app = create_app(state, ui_dir=ui)
    uvicorn.run(app, host=host, port=port)


@main.command("export-curated")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--vets", required=True, type=click.Path(exists=True), help="vets.jsonl decision log")
@click.option("--cap", default=2, show_default=True, help="max accepted pairs per scene")
@click.option("--out", required=True, type=click.Path())
@click.option("--sidecar", default=None, type=click.Path(), help="latest decisions incl. reasons")
def export_curated_cmd(manifest, vets, cap, out, sidecar):
    """Write the accepted subset of the manifest after vetting."""
    from .benchmark_build import BenchmarkManifest, load_manifest, save_manifest
    from .study_service import export_curated

    m = load_manifest(manifest)
    vet_log = list(read_jsonl(vets))
    counts: dict[str, int] = {}
    for rec in vet_log:
        counts[rec["pair_id"]] = counts.get(rec["pair_id"], 0) + 1
    kept, decisions = export_curated(m, vet_log, per_scene_cap=cap, vet_counts=counts)
    curated = BenchmarkManifest(items=kept, bin_edges=m.bin_edges, config={**m.config, "curated_from": str(manifest)})
    save_manifest(curated, out)
    if sidecar:
        write_jsonl(sidecar, decisions)
    click.echo(f"exported {len(kept)} curated items -> {out}")


@main.command()
@click.option("--scenes", required=True, type=click.Path(exists=True))
@click.option("--candidates", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="scratch dir for generated pairs")
@click.option("--workers", default=1, show_default=True)
@click.option("--report-json", default=None, type=click.Path())
def throughput(scenes, candidates, out, workers, report_json):
    """Measure pair-generation rate with a per-stage breakdown."""
    from .compositor import generation_throughput

    cands = _load_candidates(candidates)
    rep = generation_throughput(scenes, cands, out, workers=workers)
    payload = rep.to_dict()
    payload["workers"] = workers
    click.echo(json.dumps(payload, indent=1, sort_keys=True))
    if report_json:
        Path(report_json).write_text(json.dumps(payload, indent=1, sort_keys=True))


if __name__ == "__main__":
    main()
