"""Benchmark grid and the four-condition ablation, offline.

Runs a small dataset x horizon x method grid with the deterministic oracle
backend, then the fixed ablation ladder (Simple, Simple+Retrieval,
Simple+IR, FLAIRR) that isolates what retrieval and iterative refinement
each contribute. Reports are written as CSV and JSON next to the
per-session logs.

Run: python3 demos/05_benchmark_ablation.py
"""

from pathlib import Path
from tempfile import TemporaryDirectory

from flairr.bench import ExperimentConfig, run_ablation, run_experiment
from flairr.testing import SyntheticOracleBackend, seasonal_series


def show(rows) -> None:
    for row in rows:
        print(
            f"{row.dataset} h={row.horizon} {row.method:18s} "
            f"median MAE {row.median_mae:.4f} over {len(row.run_maes)} runs "
            f"({row.refiner_calls} refiner calls)"
        )


def main() -> None:
    with TemporaryDirectory() as tmp:
        values = seasonal_series(1200, period=24, trend=0.005, amplitude=0.1, noise=0.02, seed=9)
        csv_path = Path(tmp) / "demand.csv"
        csv_path.write_text("demand\n" + "\n".join(repr(float(v)) for v in values) + "\n")

        cfg = ExperimentConfig(
            target="demand",
            horizons=(24,),
            methods=("simple", "retrieval-only", "flairr"),
            dataset_path=str(csv_path),
            dataset_name="demand",
            dataset_description="synthetic daily-cycle demand",
            runs=2,
            max_test_windows=3,
            output_dir=str(Path(tmp) / "bench-out"),
            seed=5,
            session_overrides={"context_length": 96, "sample_size": 2, "max_iterations": 3},
        )
        backend = SyntheticOracleBackend(seed=5)

        rows, run_dir = run_experiment(cfg, backend)
        print(f"method grid (artifacts in {run_dir}):")
        show(rows)

        rows, _ = run_ablation(cfg, backend, emit=False)
        print("\nablation ladder:")
        show(rows)


if __name__ == "__main__":
    main()
