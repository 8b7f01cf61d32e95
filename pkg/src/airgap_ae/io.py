"""CSV output and plain-text model files.

Model file layout (version 1)::

    airgap-ae-model 1
    kind comm
    meta n_messages 256
    ...
    net transmitter dims 256,256,8 activations elu,linear
    net receiver dims 8,256,256 activations relu,softmax
    params transmitter 67848
    <one value per line, repr precision>
    params receiver 68352
    ...

``meta`` lines rebuild the object, ``net`` lines document the architecture,
``params`` blocks restore the flat parameter buffers exactly.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .comm import CommSystem
from .feedback import FeedbackSystem
from .rtn import RtnReceiver

SCHEMAS = {
    "bler": ("snr_db", "bler", "ci_halfwidth", "scheme"),
    "mse": ("snr_db", "mse", "ci_halfwidth", "scheme"),
    "variance": ("sigma_l2", "v", "stage"),
    "bler_vs_mse": ("sigma_l2", "bler_noisy", "bler_perfect"),
    "train_log": ("iteration", "phase", "loss"),
    "train_log_timed": ("iteration", "phase", "loss", "elapsed"),
    "feedback_log": ("outer", "direction", "step", "tx_loss", "mse"),
}

MAGIC = "airgap-ae-model"


class ModelFormatError(ValueError):
    pass


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def emit_csv(rows, schema, path):
    """Write a header and rows with ``repr`` floats and LF line endings."""
    if schema not in SCHEMAS:
        raise ValueError(f"unknown CSV schema {schema!r}")
    header = SCHEMAS[schema]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row[k] for k in header]
            if len(row) != len(header):
                raise ValueError(f"row {row!r} does not match schema {header}")
            writer.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------
# models


def _net_lines(name, net):
    if isinstance(net, RtnReceiver):
        return [
            f"net {name}.estimator dims {','.join(map(str, net.estimator.layer_dims))} "
            f"activations {','.join(net.estimator.activations)}",
            f"net {name}.discriminator dims {','.join(map(str, net.discriminator.layer_dims))} "
            f"activations {','.join(net.discriminator.activations)}",
        ]
    return [f"net {name} dims {','.join(map(str, net.layer_dims))} activations {','.join(net.activations)}"]


def _buffers(obj):
    if isinstance(obj, CommSystem):
        return {"transmitter": obj.transmitter, "receiver": obj.receiver}
    out = {}
    for name, dev in obj.devices.items():
        out[f"{name}.transmitter"] = dev.transmitter
        out[f"{name}.receiver"] = dev.receiver
    return out


def save_model(obj, path):
    lines = [f"{MAGIC} 1"]
    if isinstance(obj, CommSystem):
        lines += ["kind comm", f"meta n_messages {obj.n_messages}", f"meta n_channel {obj.n_channel}",
                  f"meta channel_kind {obj.channel_kind}", f"meta sigma_c2 {obj.sigma_c2!r}"]
    elif isinstance(obj, FeedbackSystem):
        lines += ["kind feedback", f"meta n_uses {obj.n_uses}", f"meta channel_kind {obj.channel_kind}",
                  f"meta sigma_f2 {obj.sigma_f2!r}", f"meta seed {obj.seed}"]
        for name, dev in obj.devices.items():
            lines.append(f"scale {name} {dev.scale_ema!r} {dev.scale_updates} {dev.ema_decay!r}")
    else:
        raise TypeError(f"cannot save {type(obj).__name__}")
    buffers = _buffers(obj)
    for name, net in buffers.items():
        lines += _net_lines(name, net)
    for name, net in buffers.items():
        lines.append(f"params {name} {net.n_params}")
        lines += [repr(float(v)) for v in net.params]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"{MAGIC} 1":
        raise ModelFormatError(f"{path}: not an {MAGIC} v1 file")
    meta, scales, params, kind = {}, {}, {}, None
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        tag = parts[0] if parts else ""
        if tag == "kind":
            kind = parts[1]
        elif tag == "meta":
            meta[parts[1]] = parts[2]
        elif tag == "scale":
            scales[parts[1]] = (float(parts[2]), int(parts[3]), float(parts[4]))
        elif tag == "params":
            n = int(parts[2])
            try:
                params[parts[1]] = np.array([float(v) for v in lines[i + 1:i + 1 + n]])
            except ValueError as exc:
                raise ModelFormatError(f"{path}: bad parameter value in {parts[1]}: {exc}") from None
            if len(params[parts[1]]) != n:
                raise ModelFormatError(f"{path}: truncated parameter block {parts[1]}")
            i += n
        elif tag not in ("net", ""):
            raise ModelFormatError(f"{path}:{i + 1}: unknown line {lines[i]!r}")
        i += 1

    if kind == "comm":
        obj = CommSystem(int(meta["n_messages"]), int(meta["n_channel"]), meta["channel_kind"],
                         float(meta["sigma_c2"]))
    elif kind == "feedback":
        obj = FeedbackSystem(int(meta["n_uses"]), meta["channel_kind"], float(meta["sigma_f2"]),
                             seed=int(meta["seed"]))
        for name, (ema, count, decay) in scales.items():
            dev = obj.devices[name]
            dev.scale_ema, dev.scale_updates, dev.ema_decay = ema, count, decay
    else:
        raise ModelFormatError(f"{path}: unknown model kind {kind!r}")
    for name, net in _buffers(obj).items():
        if name not in params or params[name].shape != net.params.shape:
            raise ModelFormatError(f"{path}: missing or mis-sized parameters for {name}")
        net.params[:] = params[name]
    return obj
