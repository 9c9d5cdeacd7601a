"""Driving a full experiment through the command-line entry point.

Writes a config, runs the three subcommands in-process and prints what
landed on disk. The same flow works from a shell:

    pddiffusion print-default-config > config.toml
    pddiffusion run --config config.toml --out-dir out
    pddiffusion compare --config config.toml --out-dir out
    pddiffusion certify --config config.toml --out-dir out
"""

import json
import tempfile
from pathlib import Path

from pddiffusion import cli

CONFIG = """\
[topology]
n = 6
kind = "undirected-random"
density = 0.6
seed = 3

[instance]
family = "B"
p = 8
m_k = 12
sparsity = 0.5
noise_std = 0.02
lambda = 0.3
ridge = 0.1

[solver]
max_iter = 400
tol = 1e-8

[compare]
methods = ["pdd", "pdd-tracking", "extra"]
tol = 1e-6
"""

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp)
    config = out / "config.toml"
    config.write_text(CONFIG)

    rc = cli.main(["run", "--config", str(config), "--out-dir", str(out)])
    summary = json.loads((out / "summary.json").read_text())
    print(f"run: exit {rc}, {summary['n_iterations']} iterations, "
          f"final sq error {summary['final_sq_error']:.2e}")
    print(f"     certificate {summary['certificate']['verdict']}, "
          f"gamma = {summary['certificate']['gamma']:.4f}")
    head = (out / "trace.csv").read_text().splitlines()[:4]
    print("     trace.csv head:")
    for line in head:
        print("      ", line)

    print("\ncompare:")
    rc = cli.main(["compare", "--config", str(config), "--out-dir", str(out)])
    print(f"(exit {rc}; full table in comparison.csv)")

    print("\ncertify:")
    rc = cli.main(["certify", "--config", str(config), "--out-dir", str(out)])
    print(f"(exit {rc}; report in certificate.json)")
