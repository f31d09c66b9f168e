import contextlib
import dataclasses
import enum
import importlib.metadata
import logging
import pathlib
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Any
from typing import Mapping

import click
import pandas as pd
from click.core import ParameterSource
from rich.console import Console
from rich.table import Table

from tadquality import settings
from tadquality.anchor_sampling import BemHeadParams
from tadquality.enum import APInterpolation
from tadquality.enum import JitterMode
from tadquality.enum import MapFormat
from tadquality.enum import NMSDecay
from tadquality.enum import Preset
from tadquality.enum import QualitySource
from tadquality.enum import ReductionMethod
from tadquality.enum import SweepKind
from tadquality.evaluation import EvalProtocol
from tadquality.evaluation import map_table
from tadquality.exceptions import BaseApplicationException
from tadquality.exceptions import InvalidScaleSetException
from tadquality.experiments import SweepSettings
from tadquality.experiments import detect_corpus
from tadquality.experiments import label_maps_for_corpus
from tadquality.experiments import oracle_experiment
from tadquality.experiments import parse_grid
from tadquality.experiments import predicted_maps_for_corpus
from tadquality.experiments import run_sweep
from tadquality.formats import AnnotationFile
from tadquality.formats import AnnotationSchema
from tadquality.formats import BaseFormatException
from tadquality.formats import DetectionFile
from tadquality.formats import DetectionSchema
from tadquality.formats import ManifestFile
from tadquality.formats import RunManifest
from tadquality.formats.tables import write_quality_maps
from tadquality.formats.tables import write_table
from tadquality.gradcheck import LOSS_NAMES
from tadquality.gradcheck import check_losses
from tadquality.inference import InferenceConfig
from tadquality.inference import PyramidConfig
from tadquality.logging import logger
from tadquality.logging import logging_basic_config
from tadquality.quality_maps import AnchorScaleSet
from tadquality.synthetic import CorpusConfig
from tadquality.synthetic import NoiseConfig
from tadquality.synthetic import generate_ground_truth
from tadquality.synthetic import generate_noisy_detections
from tadquality.synthetic import generate_predictions


class ClickUsageError(click.UsageError):
    """Wrapper on the `click.UsageError that automatically wraps the error message"""

    def __init__(
        self, message: str | Exception, ctx: click.Context | None = None
    ) -> None:
        super().__init__(click.wrap_text(str(message)), ctx)


class AnchorSetType(click.ParamType):
    name = "anchor-set"

    def convert(self, value, param, ctx):
        if isinstance(value, AnchorScaleSet):
            return value
        try:
            return AnchorScaleSet.parse(str(value))
        except InvalidScaleSetException as e:
            self.fail(str(e), param, ctx)


class ThresholdsType(click.ParamType):
    name = "thresholds"

    def convert(self, value, param, ctx):
        if isinstance(value, (list, tuple)):
            items = value
        else:
            items = [item for item in str(value).split(",") if item.strip()]
        try:
            return tuple(float(item) for item in items)
        except ValueError:
            self.fail(f"{value!r} is not a comma-separated list of numbers", param, ctx)


ANCHOR_SET = AnchorSetType()
THRESHOLDS = ThresholdsType()
INPUT_FILE = click.Path(dir_okay=False, path_type=pathlib.Path)
OUTPUT_PATH = click.Path(path_type=pathlib.Path)

console = Console(stderr=True)


@contextlib.contextmanager
def reported_errors():
    try:
        yield
    except (BaseApplicationException, BaseFormatException) as e:
        raise ClickUsageError(e)


def tool_version() -> str:
    try:
        return importlib.metadata.version(settings.APP_NAME)
    except importlib.metadata.PackageNotFoundError:
        return "0+unknown"


def load_config(path: pathlib.Path | None) -> dict[str, Any]:
    if path is None:
        if not settings.DEFAULT_CONFIG_PATH.exists():
            return {}
        path = settings.DEFAULT_CONFIG_PATH
    elif not path.exists():
        raise ClickUsageError(f"Config file `{path}` does not exist")
    try:
        with path.open("rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ClickUsageError(f"{path}: {e}")


def default_map_for(group: click.Group, values: Mapping[str, Any]) -> dict[str, dict]:
    """Route flat config keys, spelled like long flags, to every command that has them"""
    default_map = {}
    for name, command in group.commands.items():
        defaults = {}
        for param in command.params:
            for opt in getattr(param, "opts", ()):
                key = opt.lstrip("-")
                if opt.startswith("--") and key in values:
                    defaults[param.name] = values[key]
        default_map[name] = defaults
    return default_map


def _plain(value: Any) -> Any:
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, (pathlib.Path, AnchorScaleSet)):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value


def write_manifest(
    ctx: click.Context,
    output: pathlib.Path,
    inputs: Mapping[str, pathlib.Path],
    outputs: Mapping[str, pathlib.Path],
):
    manifest = RunManifest(
        subcommand=ctx.info_name,
        config={key: _plain(value) for key, value in sorted(ctx.params.items())},
        seed=ctx.obj["seed"],
        inputs={key: str(path) for key, path in inputs.items()},
        outputs={key: str(path) for key, path in outputs.items()},
        version=tool_version(),
    )
    ManifestFile.beside(output, settings.MANIFEST_SUFFIX).write(manifest)


def print_summary(title: str, rows: Mapping[str, Mapping[str, float]]):
    table = Table(title=title)
    columns = list(next(iter(rows.values()), {}))
    table.add_column("")
    for column in columns:
        table.add_column(column, justify="right")
    for name, row in rows.items():
        table.add_row(name, *(f"{100 * row[c]:.2f}" for c in columns))
    console.print(table)


def read_annotations(path: pathlib.Path) -> AnnotationSchema:
    with reported_errors():
        return AnnotationFile(path).read()


def read_detections(path: pathlib.Path, annotations: AnnotationSchema):
    with reported_errors():
        return DetectionFile(path).read().detections(annotations)


def resolve_protocol(
    preset: str, thresholds: tuple[float, ...] | None, interpolation: str
) -> EvalProtocol:
    with reported_errors():
        protocol = EvalProtocol.preset(Preset(preset))
        if thresholds:
            protocol = dataclasses.replace(protocol, thresholds=tuple(thresholds))
        return dataclasses.replace(
            protocol, interpolation=APInterpolation(interpolation)
        )


_INFERENCE_PARAMS = {"scale_set": "anchor_set"}


def inference_config(
    ctx: click.Context, preset: str | None, **values: Any
) -> InferenceConfig:
    """A preset's settings overridden by every flag not left at its default"""
    if preset is None:
        return InferenceConfig(**values)
    explicit = {
        field: value
        for field, value in values.items()
        if ctx.get_parameter_source(_INFERENCE_PARAMS.get(field, field))
        != ParameterSource.DEFAULT
    }
    return dataclasses.replace(InferenceConfig.preset(Preset(preset)), **explicit)


def protocol_options(fn):
    fn = click.option(
        "interpolation",
        "--interpolation",
        type=click.Choice([i.value for i in APInterpolation], case_sensitive=False),
        default=APInterpolation.ALL_POINT.value,
        show_default=True,
    )(fn)
    fn = click.option(
        "thresholds",
        "--thresholds",
        type=THRESHOLDS,
        help="Comma-separated tIoU thresholds; overrides the preset.",
    )(fn)
    fn = click.option(
        "preset",
        "--preset",
        type=click.Choice([i.value for i in Preset], case_sensitive=False),
        default=Preset.THUMOS.value,
        show_default=True,
    )(fn)
    return fn


def noise_options(fn):
    fn = click.option("miss_rate", "--miss-rate", type=click.FloatRange(0, 1), default=0.0, show_default=True)(fn)
    fn = click.option("fp_rate", "--fp-rate", type=click.FloatRange(min=0), default=0.0, show_default=True)(fn)
    fn = click.option("score_noise", "--score-noise", type=click.FloatRange(min=0), default=0.0, show_default=True)(fn)
    fn = click.option(
        "jitter_mode",
        "--jitter-mode",
        type=click.Choice([i.value for i in JitterMode], case_sensitive=False),
        default=JitterMode.ABSOLUTE.value,
        show_default=True,
    )(fn)
    fn = click.option(
        "boundary_jitter", "--boundary-jitter", type=click.FloatRange(min=0), default=0.0, show_default=True
    )(fn)
    return fn


def noise_from(params: Mapping[str, Any]) -> NoiseConfig:
    return NoiseConfig(
        boundary_jitter=params["boundary_jitter"],
        jitter_mode=JitterMode(params["jitter_mode"]),
        score_noise=params["score_noise"],
        false_positive_rate=params["fp_rate"],
        miss_rate=params["miss_rate"],
    )


def anchor_set_option(fn):
    return click.option(
        "anchor_set",
        "--anchor-set",
        type=ANCHOR_SET,
        default=",".join(f"{v:g}" for v in settings.DEFAULT_ANCHOR_SET),
        show_default=True,
        help="`rmin,rmax,count`, or a single scale.",
    )(fn)


def scale_options(fn):
    fn = click.option("tau", "--tau", type=click.FLOAT, default=settings.DEFAULT_TAU, show_default=True)(fn)
    return anchor_set_option(fn)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(package_name=settings.APP_NAME)
@click.option("seed", "--seed", type=click.INT, default=settings.DEFAULT_SEED, show_default=True)
@click.option(
    "config",
    "--config",
    type=INPUT_FILE,
    help=f"TOML file with flag defaults [default: {settings.DEFAULT_CONFIG_PATH} if present]",
)
@click.option(
    "debug",
    "-d/-D",
    "--debug/--no-debug",
    default=False,
    show_default=True,
    help="Enable/disable debug info.",
)
@click.pass_context
def tadq(ctx: click.Context, seed: int, config: pathlib.Path | None, debug: bool):
    ctx.ensure_object(dict)

    if debug:
        logging_basic_config(level=logging.DEBUG)
    else:
        logging_basic_config()

    values = load_config(config)
    ctx.default_map = default_map_for(ctx.command, values)
    if ctx.get_parameter_source("seed") == ParameterSource.DEFAULT and "seed" in values:
        seed = int(values["seed"])
    logger.debug("Running with seed %d", seed)
    ctx.obj.update({"seed": seed})


@tadq.command(help="Generate a synthetic annotation corpus (and optionally noisy detections).")
@click.argument("out", type=OUTPUT_PATH)
@click.option("videos", "--videos", type=click.IntRange(min=0), default=20, show_default=True)
@click.option("classes", "--classes", type=click.IntRange(min=1), default=4, show_default=True)
@click.option("video_length", "--video-length", type=(float, float), default=(200.0, 400.0), show_default=True)
@click.option("actions", "--actions", type=(int, int), default=(1, 5), show_default=True)
@click.option("durations", "--durations", type=(float, float), default=(2.0, 100.0), show_default=True)
@click.option("fps", "--fps", type=click.FloatRange(min=0, min_open=True), default=settings.DEFAULT_FPS, show_default=True)
@click.option(
    "detections",
    "--detections",
    type=OUTPUT_PATH,
    help="Also write noisy detections for the corpus to this file.",
)
@noise_options
@click.pass_context
def corpus(
    ctx: click.Context,
    out: pathlib.Path,
    videos: int,
    classes: int,
    video_length: tuple[float, float],
    actions: tuple[int, int],
    durations: tuple[float, float],
    fps: float,
    detections: pathlib.Path | None,
    **noise,
):
    seed = ctx.obj["seed"]
    with reported_errors():
        cfg = CorpusConfig(
            videos=videos,
            classes=classes,
            video_length=video_length,
            actions_per_video=actions,
            action_duration=durations,
            fps=fps,
            seed=seed,
        )
        with console.status("Generating corpus..."):
            annotations = generate_ground_truth(cfg)
            AnnotationFile(out).write(annotations)
            outputs = {"annotations": out}
            if detections is not None:
                dets = generate_noisy_detections(annotations, noise_from(noise), seed)
                DetectionFile(detections).write(
                    DetectionSchema.from_detections(dets, annotations)
                )
                outputs["detections"] = detections
    write_manifest(ctx, out, {}, outputs)
    console.print(
        f"{len(annotations.videos)} videos, {len(annotations.all_actions())} actions"
    )


@tadq.command("label-maps", help="Write the multi-scale boundary quality maps of every video.")
@click.argument("annotations", type=INPUT_FILE)
@click.argument("out", type=OUTPUT_PATH)
@click.option(
    "format_",
    "--format",
    type=click.Choice([i.value for i in MapFormat], case_sensitive=False),
    default=MapFormat.CSV.value,
    show_default=True,
)
@anchor_set_option
@click.pass_context
def label_maps(
    ctx: click.Context,
    annotations: pathlib.Path,
    out: pathlib.Path,
    format_: str,
    anchor_set: AnchorScaleSet,
):
    data = read_annotations(annotations)
    if not data.videos:
        logger.info("Empty corpus, nothing to write")
        return
    outputs = {}
    with reported_errors(), console.status("Computing quality maps..."):
        for video_id, maps in label_maps_for_corpus(data, anchor_set).items():
            for path in write_quality_maps(out, video_id, maps, MapFormat(format_)):
                outputs[path.name] = path
    write_manifest(ctx, out, {"annotations": annotations}, outputs)


@tadq.command(help="Decode synthetic head outputs into scored, suppressed detections.")
@click.argument("annotations", type=INPUT_FILE)
@click.argument("out", type=OUTPUT_PATH)
@scale_options
@click.option("nms_threshold", "--nms-threshold", type=click.FLOAT, default=settings.DEFAULT_NMS_THRESHOLD, show_default=True)
@click.option(
    "nms_decay",
    "--nms-decay",
    type=click.Choice([i.value for i in NMSDecay], case_sensitive=False),
    default=NMSDecay.LINEAR.value,
    show_default=True,
)
@click.option("per_class_nms", "--per-class-nms/--class-agnostic-nms", default=False, show_default=True)
@click.option("use_refinement", "--refinement/--no-refinement", default=True, show_default=True)
@click.option("use_refined_scores", "--refined-scores/--no-refined-scores", default=True, show_default=True)
@click.option("use_refined_quality", "--refined-quality/--no-refined-quality", default=True, show_default=True)
@click.option("use_boundary_quality", "--boundary-quality/--no-boundary-quality", default=True, show_default=True)
@click.option(
    "quality_source",
    "--quality-source",
    type=click.Choice([i.value for i in QualitySource], case_sensitive=False),
    default=QualitySource.LABEL.value,
    show_default=True,
)
@click.option("samples", "--bem-samples", type=click.IntRange(min=2), default=settings.DEFAULT_BEM_SAMPLES, show_default=True)
@click.option(
    "reduction",
    "--reduction",
    type=click.Choice([i.value for i in ReductionMethod], case_sensitive=False),
    default=ReductionMethod.MAX.value,
    show_default=True,
)
@click.option("bem_params", "--bem-params", type=INPUT_FILE, help="Saved boundary head parameters.")
@click.option(
    "preset",
    "--preset",
    type=click.Choice([i.value for i in Preset], case_sensitive=False),
    help="Start from a dataset's inference settings; explicit flags still win.",
)
@noise_options
@click.pass_context
def pipeline(
    ctx: click.Context,
    annotations: pathlib.Path,
    out: pathlib.Path,
    anchor_set: AnchorScaleSet,
    tau: float,
    nms_threshold: float,
    nms_decay: str,
    per_class_nms: bool,
    use_refinement: bool,
    use_refined_scores: bool,
    use_refined_quality: bool,
    use_boundary_quality: bool,
    quality_source: str,
    samples: int,
    reduction: str,
    bem_params: pathlib.Path | None,
    preset: str | None,
    **noise,
):
    seed = ctx.obj["seed"]
    data = read_annotations(annotations)
    inputs = {"annotations": annotations}
    with reported_errors():
        cfg = inference_config(
            ctx,
            preset,
            scale_set=anchor_set,
            tau=tau,
            nms_threshold=nms_threshold,
            nms_decay=NMSDecay(nms_decay),
            per_class_nms=per_class_nms,
            use_refinement=use_refinement,
            use_refined_scores=use_refined_scores,
            use_refined_quality=use_refined_quality,
            use_boundary_quality=use_boundary_quality,
        )
        anchor_set = cfg.scale_set
        pyramid = PyramidConfig()
        class_names = data.classes
        with console.status("Running the detection pipeline..."):
            predictions = generate_predictions(
                data, class_names, noise_from(noise), pyramid, seed
            )
            maps = {}
            if use_boundary_quality:
                if QualitySource(quality_source) == QualitySource.BEM:
                    params = None
                    if bem_params is not None:
                        params = BemHeadParams.load(bem_params)
                        inputs["bem_params"] = bem_params
                    maps = predicted_maps_for_corpus(
                        data,
                        anchor_set,
                        samples,
                        ReductionMethod(reduction),
                        seed,
                        params=params,
                    )
                else:
                    maps = label_maps_for_corpus(data, anchor_set)
            detections = detect_corpus(data, predictions, maps, cfg, class_names, pyramid)
        DetectionFile(out).write(DetectionSchema.from_detections(detections, data))
    write_manifest(ctx, out, inputs, {"detections": out})
    console.print(f"{len(detections)} detections in {len(data.videos)} videos")


@tadq.command("eval", help="Write per-class AP and mAP at every tIoU threshold.")
@click.argument("annotations", type=INPUT_FILE)
@click.argument("detections", type=INPUT_FILE)
@click.argument("out", type=OUTPUT_PATH)
@protocol_options
@click.pass_context
def eval_(
    ctx: click.Context,
    annotations: pathlib.Path,
    detections: pathlib.Path,
    out: pathlib.Path,
    preset: str,
    thresholds: tuple[float, ...] | None,
    interpolation: str,
):
    data = read_annotations(annotations)
    dets = read_detections(detections, data)
    protocol = resolve_protocol(preset, thresholds, interpolation)
    with reported_errors():
        table = map_table(dets, data.all_actions(), protocol)
    write_table(out, table.to_frame())
    write_manifest(
        ctx, out, {"annotations": annotations, "detections": detections}, {"table": out}
    )
    print_summary("mAP", {"mAP": table.summary()})


@tadq.command(help="Compare mAP of the raw scores with scores replaced by the true tIoU.")
@click.argument("annotations", type=INPUT_FILE)
@click.argument("detections", type=INPUT_FILE)
@click.argument("out", type=OUTPUT_PATH)
@protocol_options
@click.pass_context
def oracle(
    ctx: click.Context,
    annotations: pathlib.Path,
    detections: pathlib.Path,
    out: pathlib.Path,
    preset: str,
    thresholds: tuple[float, ...] | None,
    interpolation: str,
):
    data = read_annotations(annotations)
    dets = read_detections(detections, data)
    protocol = resolve_protocol(preset, thresholds, interpolation)
    with reported_errors():
        raw, rescored = oracle_experiment(data, dets, protocol)
    rows = {"raw": raw.summary(), "oracle": rescored.summary()}
    write_table(
        out, pd.DataFrame([{"scores": name, **row} for name, row in rows.items()])
    )
    write_manifest(
        ctx, out, {"annotations": annotations, "detections": detections}, {"table": out}
    )
    print_summary("Oracle rescoring", rows)


@tadq.command(help="Evaluate detections over a grid of one inference parameter.")
@click.argument("annotations", type=INPUT_FILE)
@click.argument("detections", type=INPUT_FILE)
@click.argument("out", type=OUTPUT_PATH)
@click.option(
    "kind",
    "--kind",
    type=click.Choice([i.value for i in SweepKind], case_sensitive=False),
    required=True,
)
@click.option(
    "grid",
    "--grid",
    required=True,
    help="Grid values separated by `,` or `;` (anchor sets by `;` only).",
)
@scale_options
@click.option("nms_threshold", "--nms-threshold", type=click.FLOAT, default=settings.DEFAULT_NMS_THRESHOLD, show_default=True)
@click.option(
    "quality_source",
    "--quality-source",
    type=click.Choice([i.value for i in QualitySource], case_sensitive=False),
    default=QualitySource.LABEL.value,
    show_default=True,
)
@click.option("samples", "--bem-samples", type=click.IntRange(min=2), default=settings.DEFAULT_BEM_SAMPLES, show_default=True)
@protocol_options
@click.pass_context
def sweep(
    ctx: click.Context,
    annotations: pathlib.Path,
    detections: pathlib.Path,
    out: pathlib.Path,
    kind: str,
    grid: str,
    anchor_set: AnchorScaleSet,
    tau: float,
    nms_threshold: float,
    quality_source: str,
    samples: int,
    preset: str,
    thresholds: tuple[float, ...] | None,
    interpolation: str,
):
    data = read_annotations(annotations)
    dets = read_detections(detections, data)
    protocol = resolve_protocol(preset, thresholds, interpolation)
    with reported_errors():
        values = parse_grid(SweepKind(kind), grid)
        base = SweepSettings(
            inference=InferenceConfig(
                scale_set=anchor_set, tau=tau, nms_threshold=nms_threshold
            ),
            protocol=protocol,
            quality_source=QualitySource(quality_source),
            samples=samples,
            seed=ctx.obj["seed"],
        )
        with console.status(f"Sweeping {kind} over {len(values)} values..."):
            rows = run_sweep(SweepKind(kind), values, data, dets, base)
    write_table(out, rows)
    write_manifest(
        ctx, out, {"annotations": annotations, "detections": detections}, {"table": out}
    )
    print_summary(
        f"Sweep over {kind}",
        {row["parameter"]: {k: v for k, v in row.items() if k != "parameter"} for row in rows.to_dict("records")},
    )


@tadq.command(help="Check analytic loss gradients against central finite differences.")
@click.argument("out", type=OUTPUT_PATH)
@click.option("points", "--points", type=click.IntRange(min=1), default=settings.DEFAULT_GRADCHECK_POINTS, show_default=True)
@click.option(
    "inject_wrong_sign",
    "--inject-wrong-sign",
    type=click.Choice(LOSS_NAMES),
    multiple=True,
    hidden=True,
)
@click.pass_context
def gradcheck(
    ctx: click.Context,
    out: pathlib.Path,
    points: int,
    inject_wrong_sign: tuple[str, ...],
):
    with console.status("Checking gradients..."):
        rows = check_losses(points, ctx.obj["seed"], wrong_sign=inject_wrong_sign)
    table = pd.DataFrame(
        [
            {
                "loss": row.loss,
                "value": row.value,
                "max_relative_error": row.max_relative_error,
                "status": "PASS" if row.passed else "FAIL",
            }
            for row in rows
        ]
    )
    write_table(out, table)
    write_manifest(ctx, out, {}, {"table": out})

    summary = Table(title="Gradient check")
    for column in ("loss", "max relative error", "status"):
        summary.add_column(column)
    for row in rows:
        summary.add_row(
            row.loss,
            f"{row.max_relative_error:.2e}",
            "PASS" if row.passed else "[red]FAIL[/red]",
        )
    console.print(summary)
    if not all(row.passed for row in rows):
        ctx.exit(1)


def main():
    tadq()


if __name__ == "__main__":
    main()
