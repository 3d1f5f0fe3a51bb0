"""Mixed-instance comparison of ACE and Growing Spheres on the synthetic datasets.

    python3 scripts/synthetic_benchmark.py --datasets continuous mixed --instances 30
"""

import argparse
from dataclasses import dataclass, field

from ace_cfe import synthetic
from ace_cfe.bench import render_table, run_mixed_test, write_records
from ace_cfe.engine import EngineConfig


@dataclass
class BenchConfig:
    datasets: list = field(default_factory=lambda: ["continuous", "mixed"])
    methods: list = field(default_factory=lambda: ["ace", "gs"])
    instances: int = 30
    seed: int = 0
    n0: int = 30
    out_prefix: str | None = None


def main(cfg: BenchConfig):
    engine_cfg = EngineConfig(n0=cfg.n0, init="dataset")
    for name in cfg.datasets:
        data, schema = synthetic.DATASETS[name]()
        records = []
        for method in cfg.methods:
            records += run_mixed_test(method, data, schema, n_instances=cfg.instances,
                                      seed=cfg.seed, engine_config=engine_cfg, dataset=name)
        print(f"== {name} ({len(data)} rows, {len(schema)} features)")
        print(render_table(records))
        if cfg.out_prefix:
            write_records(f"{cfg.out_prefix}_{name}.csv", records)


if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--datasets", nargs="+", default=BenchConfig().datasets,
                   choices=sorted(synthetic.DATASETS))
    p.add_argument("--methods", nargs="+", default=BenchConfig().methods, choices=["ace", "gs"])
    p.add_argument("--instances", type=int, default=BenchConfig.instances)
    p.add_argument("--seed", type=int, default=BenchConfig.seed)
    p.add_argument("--out-prefix", default=None)
    a = p.parse_args()
    main(BenchConfig(a.datasets, a.methods, a.instances, a.seed, out_prefix=a.out_prefix))
