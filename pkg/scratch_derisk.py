"""Scratch: measure probe headroom and training uplift on the default synthetic data."""
import time

import numpy as np

from cidlab.config import default_config
from cidlab.experiments import make_datasets
from cidlab.config import train_config_from_config
from cidlab.encoder import forward_base
from cidlab.probe import evaluate_probe, fit_linear_probe
from cidlab.trainer import init_train_state, train


def probe_top1(pair, train_ds, eval_ds):
    reprs = forward_base(pair.query_encoder, train_ds.features)
    model = fit_linear_probe(reprs, train_ds.labels, epochs=100, lr=0.1)
    res = evaluate_probe(model, forward_base(pair.query_encoder, eval_ds.features), eval_ds.labels)
    return res.top1, res.top5


def raw_probe(train_ds, eval_ds):
    model = fit_linear_probe(train_ds.features, train_ds.labels, epochs=100, lr=0.1)
    res = evaluate_probe(model, eval_ds.features, eval_ds.labels)
    return res.top1, res.top5


cfg = default_config()
train_ds, eval_ds, tree = make_datasets(cfg)
print("n_train", len(train_ds), "n_eval", len(eval_ds), "dim", train_ds.dim)

t0 = time.time()
print("raw-feature probe:", raw_probe(train_ds, eval_ds), f"({time.time()-t0:.1f}s)")

tc = train_config_from_config(cfg, train_ds.dim)
state = init_train_state(tc)
t0 = time.time()
print("random-encoder probe:", probe_top1(state.pair, train_ds, eval_ds), f"({time.time()-t0:.1f}s)")

for epochs in (10,):
    tc2 = train_config_from_config({**cfg, "epochs": epochs}, train_ds.dim)
    t0 = time.time()
    pair, records = train(tc2, train_ds)
    dt = time.time() - t0
    print(f"epochs={epochs}: train {dt:.1f}s ({dt/ (epochs * np.ceil(len(train_ds)/tc2.batch_size)) * 1000:.1f} ms/step)",
          "loss first/last:", records[0].loss, records[-1].loss)
    print("  trained probe:", probe_top1(pair, train_ds, eval_ds))
