"""Command-line entry points: robot host, operator gateway, and evaluation."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import kinematics, planner
from .calibration import load_calibration
from .gateway import (
    ConsoleBridgeSource,
    DmpStore,
    FileReplay,
    GatewayConfig,
    GatewayRuntime,
    ScriptedGenerator,
)
from .host import HostConfig, HostServer, RobotHost, make_event_log_writer


def _parse_addr(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise click.BadParameter(f"expected addr:port, got {value!r}")
    return host, int(port)


@click.command("robot-host")
@click.option("--listen", default="127.0.0.1:7461", show_default=True, help="addr:port to listen on")
@click.option("--scene", "scene_path", type=click.Path(exists=True), default=None, help="scene JSON file")
@click.option("--kinematics", "kin_path", type=click.Path(exists=True), default=None, help="kinematics JSON file")
@click.option("--dt", default=0.02, show_default=True, help="control loop cadence, s")
@click.option("--cartesian-dmp", is_flag=True, help="announce Cartesian-space model execution (models carry their own space; this only logs the preference)")
@click.option("--event-log", type=click.Path(), default=None, help="append one JSON line per host event")
def host_main(listen, scene_path, kin_path, dt, cartesian_dmp, event_log):
    """Run the robot-side service."""
    dh = kinematics.load_dh_table(kin_path) if kin_path else kinematics.default_table()
    scene = planner.load_scene(scene_path) if scene_path else []
    sink = make_event_log_writer(event_log) if event_log else None
    host = RobotHost(dh, scene, HostConfig(dt=dt), event_sink=sink)
    if cartesian_dmp:
        click.echo("note: execution space follows each uploaded model; Cartesian preferred")
    server = HostServer(host, _parse_addr(listen))
    click.echo(f"robot-host listening on {server.address[0]}:{server.address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()


@click.command("operator-gateway")
@click.option("--host", "host_addr", required=True, help="robot host addr:port")
@click.option("--calibration", "cal_path", type=click.Path(exists=True), default=None, help="calibration JSON file")
@click.option("--source", default="console", show_default=True, help="replay:<csv> | script:<name> | console")
@click.option("--console-listen", default=None, help="addr:port for the console bridge")
@click.option("--console-assets", type=click.Path(), default=None, help="static console asset directory")
@click.option("--store", "store_dir", type=click.Path(), default="dmp_store", show_default=True, help="model store directory")
@click.option("--kinematics", "kin_path", type=click.Path(exists=True), default=None, help="kinematics JSON file")
@click.option("--gain", default=1.0, show_default=True, help="steering gain")
@click.option("--cartesian-dmp", is_flag=True, help="train uploaded demos in Cartesian space")
def gateway_main(host_addr, cal_path, source, console_listen, console_assets, store_dir, kin_path, gain, cartesian_dmp):
    """Run the operator-side service."""
    from . import dmp as dmp_mod

    calibration = load_calibration(cal_path) if cal_path else None
    dh = kinematics.load_dh_table(kin_path) if kin_path else kinematics.default_table()
    config = GatewayConfig(
        gain=gain,
        train_space=dmp_mod.DmpSpace.CARTESIAN if cartesian_dmp else dmp_mod.DmpSpace.JOINT,
    )
    runtime = GatewayRuntime(
        _parse_addr(host_addr),
        calibration=calibration,
        store=DmpStore(store_dir),
        dh=dh,
        config=config,
    )

    if source.startswith("replay:"):
        pose_source = FileReplay(source.removeprefix("replay:"))
        applied = runtime.drive(pose_source)
        click.echo(f"replayed {applied} samples")
        runtime.close()
        return
    if source.startswith("script:"):
        name = source.removeprefix("script:")
        if name != "demo_reach":
            raise click.BadParameter(f"unknown script {name!r}")
        run_demo_reach(runtime)
        runtime.close()
        return
    if source != "console":
        raise click.BadParameter(f"unknown source {source!r}")

    bridge_source = ConsoleBridgeSource()
    if console_listen is None:
        raise click.BadParameter("--console-listen is required with --source console")
    from .console_bridge import create_console_app, serve_console

    app = create_console_app(runtime, bridge_source, static_dir=console_assets)
    serve_console(app, _parse_addr(console_listen))
    click.echo(f"console bridge on {console_listen}")
    try:
        runtime.drive(bridge_source)
    except KeyboardInterrupt:
        pass
    finally:
        runtime.close()


def run_demo_reach(runtime: GatewayRuntime, object_id: str | None = None) -> None:
    """Scripted full session: steer, teach a straight reach, train, execute."""
    import numpy as np

    twin = runtime.twin
    deadline = 50
    while twin.q is None or not twin.scene:
        import time

        time.sleep(0.1)
        twin = runtime.twin
        deadline -= 1
        if deadline <= 0:
            raise RuntimeError("host never sent an initial snapshot")
    if object_id is None:
        object_id = twin.scene[0].id
    target = next(o for o in twin.scene if o.id == object_id)
    dh = runtime.dh
    q = np.array(twin.q)
    p_start = kinematics.tool_position(q, dh)
    pre_grasp = np.asarray(target.centroid) + np.array([0.0, 0.0, 0.10])

    # steer a little sideways, then teach a straight reach to the pre-grasp
    steer = ScriptedGenerator(start=p_start, step=(0.004, 0.0, 0.0), count=5)
    runtime.drive(steer)
    runtime.teach_start()
    p_teach_start = p_start + np.array([0.004 * 4, 0.0, 0.0])
    n_teach = 40
    step = (pre_grasp - p_teach_start) / n_teach
    teach = ScriptedGenerator(start=p_teach_start, step=step, count=n_teach + 1, frame_offset=5)
    runtime.drive(teach)
    runtime.teach_stop_and_train(object_id)

    # steer back toward the start so execution has somewhere to go
    back = ScriptedGenerator(
        start=pre_grasp, step=-step, count=n_teach + 1, frame_offset=5 + n_teach + 1
    )
    runtime.drive(back)
    runtime.execute_to_object(object_id)


@click.group("telearm-eval")
def eval_main():
    """Reproduce the tracking-accuracy and distance-comparison experiments."""


@eval_main.command("tracking")
@click.option("--sigma", required=True, type=float, help="tracker noise sigma, m")
@click.option("--n", "n_samples", default=10_000, show_default=True, type=int)
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--out", "out_dir", default="eval_out", show_default=True, type=click.Path())
def eval_tracking(sigma, n_samples, seed, out_dir):
    from .evaluation import run_tracking_eval

    report = run_tracking_eval(sigma, n_samples=n_samples, seed=seed, out_dir=out_dir)
    for a in report.axes:
        click.echo(f"{a.axis.upper()} axis: MAD {a.mad_m:.6f} m, MAPE {a.mape_pct:.3f}% (excluded {a.excluded})")
    click.echo(f"reports written to {out_dir}")


@eval_main.command("distance")
@click.option("--goals", default=15, show_default=True, type=int)
@click.option("--seed", default=42, show_default=True, type=int)
@click.option("--out", "out_dir", default="eval_out", show_default=True, type=click.Path())
@click.option("--kinematics", "kin_path", type=click.Path(exists=True), default=None)
@click.option("--smooth", is_flag=True, help="shortcut-smooth planner paths (off for reproduction runs)")
def eval_distance(goals, seed, out_dir, kin_path, smooth):
    from .evaluation import run_distance_eval

    dh = kinematics.load_dh_table(kin_path) if kin_path else None
    summary = run_distance_eval(n_goals=goals, seed=seed, out_dir=out_dir, dh=dh, smooth=smooth)
    click.echo(
        f"mean dmp/euclidean ratio {summary.mean_dmp_ratio:.4f}; "
        f"planner longer on {summary.planner_longer_count}/{summary.n_goals} goals; "
        f"{summary.resampled_goals} goals resampled"
    )
    click.echo(f"reports written to {out_dir}")


if __name__ == "__main__":
    sys.exit(eval_main())
