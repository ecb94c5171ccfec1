"""The detector: per-view conv extractor, BEV warp, view-average, dilated BEV head.

Parameters live in a plain ``dict[str, ndarray]`` (a ParameterSet). Forward
returns a cache that :func:`backward` consumes for exact reverse-mode gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import CacheMismatch, NoActiveViews, ShapeMismatch
from ..geometry import ProjectionTable, warp_backward, warp_to_bev
from .layers import conv2d, conv2d_backward, relu, sigmoid

ParameterSet = dict  # name -> ndarray

DILATIONS = (1, 2, 4)
KERNEL = 3
FEATURE_SCALE = 0.25  # two stride-2 convs
# fixed normalisation of [0, 1] images before the first conv
INPUT_MEAN = 0.5
INPUT_STD = 0.25


@dataclass(frozen=True)
class NetConfig:
    c_feat: int = 16
    c_head: int | None = None
    c_img: int = 3
    out_bias_init: float = 0.0

    @property
    def head_channels(self) -> int:
        return self.c_head or self.c_feat


def feature_shape(image_h: int, image_w: int) -> tuple[int, int]:
    h, w = image_h, image_w
    for _ in range(2):
        h, w = (h + 1) // 2, (w + 1) // 2
    return h, w


def param_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    C, Ch, k = cfg.c_feat, cfg.head_channels, KERNEL
    return {
        "ext1.w": (C, cfg.c_img, k, k), "ext1.b": (C,),
        "ext2.w": (C, C, k, k), "ext2.b": (C,),
        "bev1.w": (Ch, C, k, k), "bev1.b": (Ch,),
        "bev2.w": (Ch, Ch, k, k), "bev2.b": (Ch,),
        "bev3.w": (1, Ch, k, k), "bev3.b": (1,),
        "aux1.w": (C, C, k, k), "aux1.b": (C,),
        "aux2.w": (2, C, k, k), "aux2.b": (2,),
    }


def init_params(cfg: NetConfig, seed: int = 0, dtype=np.float32) -> ParameterSet:
    """Kaiming-uniform (fan-in) conv weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    params["bev3.b"][:] = cfg.out_bias_init
    return params


def copy_params(params: ParameterSet) -> ParameterSet:
    return {k: v.copy() for k, v in params.items()}


def zeros_like(params: ParameterSet) -> ParameterSet:
    return {k: np.zeros_like(v) for k, v in params.items()}


@dataclass
class ForwardCache:
    active: list[int]
    order: list[int]
    views: dict = field(default_factory=dict)  # n -> per-view intermediates
    head: dict = field(default_factory=dict)
    occ: np.ndarray | None = None
    param_keys: tuple = ()


def _extract(params, x):
    x = (x - INPUT_MEAN) / INPUT_STD
    a1, c1 = conv2d(x, params["ext1.w"], params["ext1.b"], stride=2)
    r1 = relu(a1)
    a2, c2 = conv2d(r1, params["ext2.w"], params["ext2.b"], stride=2)
    f = relu(a2)
    return f, {"x_shape": x.shape, "c1": c1, "a1": a1, "r1_shape": r1.shape, "c2": c2, "a2": a2}


def _extract_backward(params, vc, df, grads):
    da2 = df * (vc["a2"] > 0)
    dr1, dw, db = conv2d_backward(da2, vc["c2"], params["ext2.w"], vc["r1_shape"], stride=2)
    grads["ext2.w"] += dw
    grads["ext2.b"] += db
    da1 = dr1 * (vc["a1"] > 0)
    _, dw, db = conv2d_backward(da1, vc["c1"], params["ext1.w"], vc["x_shape"], stride=2, need_dx=False)
    grads["ext1.w"] += dw
    grads["ext1.b"] += db


def _aux(params, f):
    g1, c1 = conv2d(f, params["aux1.w"], params["aux1.b"])
    r = relu(g1)
    z, c2 = conv2d(r, params["aux2.w"], params["aux2.b"])
    out = sigmoid(z)
    return out, {"c1": c1, "g1": g1, "r_shape": r.shape, "c2": c2, "out": out}


def _aux_backward(params, ac, dout, f_shape, grads):
    dz = dout * ac["out"] * (1 - ac["out"])
    dr, dw, db = conv2d_backward(dz, ac["c2"], params["aux2.w"], ac["r_shape"])
    grads["aux2.w"] += dw
    grads["aux2.b"] += db
    dg1 = dr * (ac["g1"] > 0)
    df, dw, db = conv2d_backward(dg1, ac["c1"], params["aux1.w"], f_shape)
    grads["aux1.w"] += dw
    grads["aux1.b"] += db
    return df


def forward(params: ParameterSet, views: np.ndarray, tables: Sequence[ProjectionTable],
            active: Sequence[bool] | None = None, with_aux: bool = False):
    """Run the detector on one multi-view sample.

    Returns ``(occupancy (h_g, w_g), aux {view: (2, h_f, w_f)}, cache)``. Views
    with ``active[n] == False`` are skipped entirely and excluded from the
    average. Active BEV maps are summed in a content-defined order so the
    result does not depend on the order views are supplied in.
    """
    views = np.asarray(views)
    N = views.shape[0]
    if len(tables) != N:
        raise ShapeMismatch(f"{N} views but {len(tables)} projection tables")
    if active is None:
        active = [True] * N
    if len(active) != N:
        raise ShapeMismatch(f"active mask has {len(active)} entries for {N} views")
    act = [n for n in range(N) if active[n]]
    if not act:
        raise NoActiveViews("at least one view must be active")

    cache = ForwardCache(active=act, order=[], param_keys=tuple(sorted(params)))
    bevs = {}
    aux = {}
    for n in act:
        f, vc = _extract(params, views[n])
        if f.shape[1:] != (tables[n].h_f, tables[n].w_f):
            raise ShapeMismatch(f"view {n}: features {f.shape[1:]} vs table ({tables[n].h_f}, {tables[n].w_f})")
        vc["f_shape"] = f.shape
        vc["table"] = tables[n]
        bevs[n] = warp_to_bev(f, tables[n])
        if with_aux:
            aux[n], vc["aux"] = _aux(params, f)
        cache.views[n] = vc

    order = sorted(act, key=lambda n: bevs[n].tobytes())
    acc = np.zeros_like(bevs[order[0]])
    for n in order:
        acc += bevs[n]
    avg = acc / len(act)
    cache.order = order

    hc = cache.head
    h = avg
    for li, d in enumerate(DILATIONS, start=1):
        z, cols = conv2d(h, params[f"bev{li}.w"], params[f"bev{li}.b"], dilation=d)
        hc[f"in{li}_shape"] = h.shape
        hc[f"cols{li}"] = cols
        hc[f"z{li}"] = z
        h = relu(z) if li < len(DILATIONS) else z
    occ = sigmoid(h[0])
    cache.occ = occ
    return occ, aux, cache


def backward(params: ParameterSet, cache: ForwardCache, grad_occ: np.ndarray | None,
             aux_grads: dict | None = None) -> ParameterSet:
    """Gradients of a scalar loss w.r.t. every parameter, given dL/d(occupancy) and dL/d(aux)."""
    if cache.occ is None or cache.param_keys != tuple(sorted(params)):
        raise CacheMismatch("cache was not produced by a forward pass with these parameters")
    grads = zeros_like(params)
    hc = cache.head
    dfeat = {}
    if grad_occ is not None:
        if grad_occ.shape != cache.occ.shape:
            raise CacheMismatch(f"upstream gradient {grad_occ.shape} vs occupancy {cache.occ.shape}")
        occ = cache.occ
        dh = (grad_occ * occ * (1 - occ))[None].astype(occ.dtype, copy=False)
        for li in range(len(DILATIONS), 0, -1):
            d = DILATIONS[li - 1]
            if li < len(DILATIONS):
                dh = dh * (hc[f"z{li}"] > 0)
            dh, dw, db = conv2d_backward(dh, hc[f"cols{li}"], params[f"bev{li}.w"], hc[f"in{li}_shape"], dilation=d)
            grads[f"bev{li}.w"] += dw
            grads[f"bev{li}.b"] += db
        davg = dh / len(cache.active)
        for n in cache.active:
            dfeat[n] = warp_backward(davg, cache.views[n]["table"])
    for n in cache.active:
        vc = cache.views[n]
        df = dfeat.get(n)
        if aux_grads and n in aux_grads:
            if "aux" not in vc:
                raise CacheMismatch(f"aux gradient for view {n} but forward ran without aux head")
            da = _aux_backward(params, vc["aux"], aux_grads[n], vc["f_shape"], grads)
            df = da if df is None else df + da
        if df is not None:
            _extract_backward(params, vc, df, grads)
    return grads
